//! Exact-recovery protocol: random Gaussian bases, a sparse set of rotated
//! active blocks, and the equality-constrained solver.

use std::fmt::Write as _;

use nalgebra::{Matrix2x3, Matrix3xX};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{derive_seed, random_rotation, with_thread_pool, RotationSampling};
use crate::convex::{solve_noiseless, MotionStack, SolverConfig};
use crate::error::{Error, Result};
use crate::shape::{Coefficients, Landmarks2D, Rotation, Shape3D, ShapeDictionary};

#[derive(Debug, Clone)]
pub struct RecoveryInstance {
    pub dict: ShapeDictionary,
    pub true_motions: MotionStack,
    pub w: Landmarks2D,
    pub coefficients: Coefficients,
    /// Rotation of every block; identity for inactive ones.
    pub rotations: Vec<Rotation>,
    pub seed: u64,
}

impl RecoveryInstance {
    /// Indices of the active blocks.
    pub fn support(&self) -> Vec<usize> {
        (0..self.coefficients.len()).filter(|&i| self.coefficients.0[i] > 0.0).collect()
    }
}

/// `make_recovery_instance_with` using ZYZ Euler-angle rotations.
pub fn make_recovery_instance(k: usize, p: usize, z: usize, seed: u64) -> Result<RecoveryInstance> {
    make_recovery_instance_with(k, p, z, seed, RotationSampling::EulerZyz)
}

/// Draws `k` bases with i.i.d. `N(0, 1)` entries (used as-is, not centered),
/// picks `z` active blocks uniformly, and sets `M_i = c_i R̄_i` with
/// `c_i ~ U(0, 1)`. `W = Σ M_i B_i` exactly.
pub fn make_recovery_instance_with(
    k: usize,
    p: usize,
    z: usize,
    seed: u64,
    sampling: RotationSampling,
) -> Result<RecoveryInstance> {
    if p == 0 || z == 0 || z > k {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= z <= k and p >= 1, got k={k}, p={p}, z={z}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = (0..k)
        .map(|_| Shape3D::new(Matrix3xX::from_fn(p, |_, _| rng.sample(StandardNormal))))
        .collect::<Result<Vec<_>>>()?;
    let dict = ShapeDictionary::from_raw(bases)?;
    let mut support = index::sample(&mut rng, k, z).into_vec();
    support.sort_unstable();

    let mut coeffs = vec![0.0; k];
    let mut rotations = vec![Rotation::identity(); k];
    let mut blocks = vec![Matrix2x3::zeros(); k];
    for &i in &support {
        let c = loop {
            let c: f64 = rng.random();
            if c > 0.0 {
                break c;
            }
        };
        let r = random_rotation(&mut rng, sampling);
        coeffs[i] = c;
        blocks[i] = r.top_rows() * c;
        rotations[i] = r;
    }
    let true_motions = MotionStack::new(blocks)?;
    let w = Landmarks2D::fully_visible(true_motions.project(dict.stacked()))?;
    Ok(RecoveryInstance {
        dict,
        true_motions,
        w,
        coefficients: Coefficients::from_vec(coeffs),
        rotations,
        seed,
    })
}

/// `‖M̂ − M̃‖_F / ‖M̃‖_F` over stacked blocks.
pub fn relative_error(estimate: &MotionStack, truth: &MotionStack) -> Result<f64> {
    if estimate.k() != truth.k() {
        return Err(Error::DimensionMismatch {
            what: "motion blocks",
            expected: truth.k(),
            found: estimate.k(),
        });
    }
    let denom = truth.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("relative error against an all-zero truth".into()));
    }
    let num: f64 = estimate
        .blocks()
        .iter()
        .zip(truth.blocks())
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGridConfig {
    pub solver: SolverConfig,
    /// A trial succeeds when the relative error is below this.
    pub threshold: f64,
    pub sampling: RotationSampling,
}

impl Default for PhaseGridConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig {
                tol: 1e-6,
                max_iter: 5000,
                ..SolverConfig::default()
            },
            threshold: 1e-3,
            sampling: RotationSampling::EulerZyz,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGridResult {
    pub k: usize,
    pub p_values: Vec<usize>,
    pub z_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// `successes[i][j]` for `p_values[i]`, `z_values[j]`.
    pub successes: Vec<Vec<usize>>,
}

impl PhaseGridResult {
    pub fn frequency(&self, i: usize, j: usize) -> f64 {
        self.successes[i][j] as f64 / self.trials as f64
    }

    /// Success frequencies, rows indexed by `p`, columns by `z`.
    pub fn frequencies(&self) -> Vec<Vec<f64>> {
        (0..self.p_values.len())
            .map(|i| (0..self.z_values.len()).map(|j| self.frequency(i, j)).collect())
            .collect()
    }

    /// CSV with header `k,p,z,trials,successes,frequency`, one row per cell,
    /// `p` major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,p,z,trials,successes,frequency\n");
        for (i, p) in self.p_values.iter().enumerate() {
            for (j, z) in self.z_values.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    self.k,
                    p,
                    z,
                    self.trials,
                    self.successes[i][j],
                    self.frequency(i, j)
                );
            }
        }
        out
    }
}

/// Runs the recovery protocol on every `(p, z)` cell with default settings.
pub fn phase_grid(k: usize, p_values: &[usize], z_values: &[usize], trials: usize, seed: u64) -> Result<PhaseGridResult> {
    phase_grid_with(k, p_values, z_values, trials, seed, &PhaseGridConfig::default())
}

/// Trial `t` of cell `(p, z)` uses seed `derive_seed(seed, [p, z, t])`.
/// Solver failures and invalid cells (`z > k`) count as non-recovery.
pub fn phase_grid_with(
    k: usize,
    p_values: &[usize],
    z_values: &[usize],
    trials: usize,
    seed: u64,
    cfg: &PhaseGridConfig,
) -> Result<PhaseGridResult> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let tasks: Vec<(usize, usize, usize)> = (0..p_values.len())
        .flat_map(|i| (0..z_values.len()).flat_map(move |j| (0..trials).map(move |t| (i, j, t))))
        .collect();
    let outcomes: Vec<bool> = with_thread_pool(|| {
        tasks
            .par_iter()
            .map(|&(i, j, t)| {
                let (p, z) = (p_values[i], z_values[j]);
                let trial_seed = derive_seed(seed, &[p as u64, z as u64, t as u64]);
                recovers(k, p, z, trial_seed, cfg)
            })
            .collect()
    });
    let mut successes = vec![vec![0usize; z_values.len()]; p_values.len()];
    for (&(i, j, _), ok) in tasks.iter().zip(outcomes) {
        successes[i][j] += ok as usize;
    }
    Ok(PhaseGridResult {
        k,
        p_values: p_values.to_vec(),
        z_values: z_values.to_vec(),
        trials,
        seed,
        successes,
    })
}

fn recovers(k: usize, p: usize, z: usize, seed: u64, cfg: &PhaseGridConfig) -> bool {
    let Ok(inst) = make_recovery_instance_with(k, p, z, seed, cfg.sampling) else {
        return false;
    };
    match solve_noiseless(&inst.w, &inst.dict, &cfg.solver) {
        Ok((m, _)) => relative_error(&m, &inst.true_motions).is_ok_and(|e| e < cfg.threshold),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::objective_penalized;
    use nalgebra::Matrix2;

    #[test]
    fn instance_examples() {
        let inst = make_recovery_instance(6, 10, 6, 1).unwrap();
        assert_eq!(inst.support().len(), 6);
        let again = make_recovery_instance(6, 10, 6, 1).unwrap();
        assert_eq!(inst.w, again.w);
        assert_eq!(inst.true_motions, again.true_motions);

        let inst = make_recovery_instance(20, 8, 4, 2).unwrap();
        assert_eq!(inst.support().len(), 4);
        for (i, b) in inst.true_motions.blocks().iter().enumerate() {
            let c = inst.coefficients.0[i];
            assert!((b * b.transpose() - Matrix2::identity() * c * c).norm() < 1e-10);
        }
        assert!(make_recovery_instance(3, 5, 4, 0).is_err());
        assert!(make_recovery_instance(3, 0, 1, 0).is_err());
    }

    #[test]
    fn data_term_vanishes_at_truth() {
        let inst = make_recovery_instance(10, 12, 3, 3).unwrap();
        let alpha = 0.7;
        let v = objective_penalized(&inst.w, &inst.dict, &inst.true_motions, alpha).unwrap();
        assert!((v - alpha * inst.coefficients.0.sum()).abs() < 1e-10);
    }

    #[test]
    fn relative_error_examples() {
        let inst = make_recovery_instance(5, 6, 3, 4).unwrap();
        let t = &inst.true_motions;
        assert_eq!(relative_error(t, t).unwrap(), 0.0);
        assert_eq!(relative_error(&MotionStack::zeros(5), t).unwrap(), 1.0);
        let scaled = MotionStack::new(t.blocks().iter().map(|b| b * 1.1).collect()).unwrap();
        assert!((relative_error(&scaled, t).unwrap() - 0.1).abs() < 1e-12);
        assert!(relative_error(t, &MotionStack::zeros(5)).is_err());
    }

    #[test]
    fn tiny_grid_is_deterministic() {
        let a = phase_grid(10, &[30], &[1], 2, 5).unwrap();
        let b = phase_grid(10, &[30], &[1], 2, 5).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.frequencies().iter().flatten().all(|f| (0.0..=1.0).contains(f)));
    }
}
