//! Nonnegative sparse shape-dictionary learning and a PCA baseline.
//!
//! Learning minimizes
//!
//! ```text
//! ½ Σ_j ‖S_j − Σ_i C_ij B_i‖²_F + λ Σ_ij C_ij   s.t.  C ≥ 0,  ‖B_i‖_F ≤ 1
//! ```
//!
//! by alternating a sparse-coding step in `C` with one projected-gradient
//! step on the bases. Both steps use backtracking from a `1/L` initial step,
//! so the total cost never increases.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::lasso::{GramLasso, LassoOptions};
use crate::shape::{procrustes_align, PointSet, Shape3D, ShapeDictionary};

pub use crate::lasso::CodingMode;

/// Coefficients with `|C_ij|` above this count as active atoms.
pub const ACTIVE_THRESHOLD: f64 = 1e-6;

/// Centralized training shapes, optionally rotated onto a common reference.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    shapes: Vec<Shape3D>,
    alignment_residuals: Vec<f64>,
}

impl TrainingSet {
    /// Centralizes every shape and rotates it onto the first one
    /// (orthogonal Procrustes, no scaling). Residuals are recorded.
    pub fn new(shapes: Vec<Shape3D>) -> Result<Self> {
        let centered = Self::centered(shapes)?;
        let reference = centered[0].clone();
        let mut aligned = Vec::with_capacity(centered.len());
        let mut residuals = Vec::with_capacity(centered.len());
        for s in centered {
            if s.frobenius_norm() == 0.0 {
                residuals.push(reference.frobenius_norm());
                aligned.push(s);
                continue;
            }
            let sim = procrustes_align(&s, &reference)?;
            let rotated = s.rotated(&sim.rotation);
            residuals.push((rotated.points() - reference.points()).norm());
            aligned.push(rotated);
        }
        Ok(Self {
            shapes: aligned,
            alignment_residuals: residuals,
        })
    }

    /// Centralizes every shape but keeps its orientation (for data that is
    /// already expressed in a common frame).
    pub fn unaligned(shapes: Vec<Shape3D>) -> Result<Self> {
        let shapes = Self::centered(shapes)?;
        let alignment_residuals = vec![0.0; shapes.len()];
        Ok(Self {
            shapes,
            alignment_residuals,
        })
    }

    fn centered(shapes: Vec<Shape3D>) -> Result<Vec<Shape3D>> {
        let Some(first) = shapes.first() else {
            return Err(Error::InvalidArgument("training set needs at least one shape".into()));
        };
        let p = first.num_points();
        shapes
            .iter()
            .map(|s| {
                ensure_dim("training shape landmark count", p, s.num_points())?;
                Ok(s.centralize()?.0)
            })
            .collect()
    }

    pub fn shapes(&self) -> &[Shape3D] {
        &self.shapes
    }

    pub fn n(&self) -> usize {
        self.shapes.len()
    }

    pub fn p(&self) -> usize {
        self.shapes[0].num_points()
    }

    /// `‖R S_j − S_ref‖_F` per shape (zero for unaligned sets).
    pub fn alignment_residuals(&self) -> &[f64] {
        &self.alignment_residuals
    }

    /// Vectorized shapes as columns, `3p x n`.
    pub fn data_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(3 * p, self.n(), |r, j| self.shapes[j].points().as_slice()[r])
    }

    pub fn mean_shape(&self) -> Shape3D {
        let mut m = nalgebra::Matrix3xX::zeros(self.p());
        for s in &self.shapes {
            m += s.points();
        }
        Shape3D::new(m / self.n() as f64).expect("finite mean")
    }
}

/// Sparse codes, `k x n` (column `j` codes training shape `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(pub DMatrix<f64>);

impl CoefficientMatrix {
    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&v| v >= 0.0)
    }

    /// Mean number of entries per column with magnitude above
    /// [`ACTIVE_THRESHOLD`].
    pub fn mean_active(&self) -> f64 {
        let n = self.0.ncols().max(1) as f64;
        self.0.iter().filter(|v| v.abs() > ACTIVE_THRESHOLD).count() as f64 / n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictLearnConfig {
    pub k: usize,
    pub lambda: f64,
    /// Initial coding step; `None` uses `1/λ_max(DᵀD)`.
    pub delta1: Option<f64>,
    /// Initial dictionary step; `None` uses `1/λ_max(CCᵀ)`.
    pub delta2: Option<f64>,
    pub outer_iters: usize,
    /// Iteration cap of each sparse-coding solve.
    pub inner_iters: usize,
    pub seed: u64,
    pub mode: CodingMode,
    /// Outer loop stops once the relative cost decrease falls below this.
    pub tol: f64,
}

impl Default for DictLearnConfig {
    fn default() -> Self {
        Self {
            k: 128,
            lambda: 0.1,
            delta1: None,
            delta2: None,
            outer_iters: 100,
            inner_iters: 500,
            seed: 0,
            mode: CodingMode::Nonnegative,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnedDictionary {
    pub dictionary: ShapeDictionary,
    pub coefficients: CoefficientMatrix,
    /// Total cost after initialization and after every outer iteration.
    pub cost_trace: Vec<f64>,
}

struct CodingProblem {
    gram: DMatrix<f64>,
    h: DMatrix<f64>,
    offset: f64,
}

impl CodingProblem {
    fn new(d: &DMatrix<f64>, x: &DMatrix<f64>) -> Self {
        Self {
            gram: d.transpose() * d,
            h: d.transpose() * x,
            offset: 0.5 * x.norm_squared(),
        }
    }

    fn solve(&self, lambda: f64, mode: CodingMode, init: &DMatrix<f64>, opts: &LassoOptions) -> DMatrix<f64> {
        if lambda.is_infinite() {
            return DMatrix::zeros(init.nrows(), init.ncols());
        }
        GramLasso {
            gram: &self.gram,
            h: &self.h,
            offset: self.offset,
            lambda,
            mode,
        }
        .solve(init, opts)
        .c
    }
}

/// `½‖X − DC‖²_F + λ Σ C_ij` (or `λ Σ |C_ij|` in signed mode).
pub fn coding_cost(d: &DMatrix<f64>, x: &DMatrix<f64>, c: &DMatrix<f64>, lambda: f64, mode: CodingMode) -> f64 {
    let fit = 0.5 * (x - d * c).norm_squared();
    let pen = match mode {
        CodingMode::Nonnegative => c.sum(),
        CodingMode::Signed => c.iter().map(|v| v.abs()).sum(),
    };
    if pen == 0.0 {
        fit
    } else {
        fit + lambda * pen
    }
}

/// Gradient of the smooth coding term `½‖X − DC‖²_F` with respect to `C`.
pub fn coding_gradient(d: &DMatrix<f64>, x: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    d.transpose() * (d * c - x)
}

/// Nonnegative sparse codes of `shapes` over `dict` (bases should satisfy
/// `‖B_i‖_F ≤ 1`). Uses `cfg.inner_iters` and `cfg.delta1` only.
pub fn nonneg_sparse_code(
    dict: &ShapeDictionary,
    shapes: &TrainingSet,
    lambda: f64,
    cfg: &DictLearnConfig,
) -> Result<CoefficientMatrix> {
    sparse_code(dict, shapes, lambda, CodingMode::Nonnegative, cfg)
}

/// Sparse codes in either sign mode.
pub fn sparse_code(
    dict: &ShapeDictionary,
    shapes: &TrainingSet,
    lambda: f64,
    mode: CodingMode,
    cfg: &DictLearnConfig,
) -> Result<CoefficientMatrix> {
    ensure_dim("landmark count", dict.p(), shapes.p())?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let d = dict.vectorized();
    let x = shapes.data_matrix();
    let problem = CodingProblem::new(&d, &x);
    let opts = LassoOptions {
        tol: 1e-8,
        max_iter: cfg.inner_iters.max(1),
    };
    Ok(CoefficientMatrix(problem.solve(
        lambda,
        mode,
        &DMatrix::zeros(dict.k(), shapes.n()),
        &opts,
    )))
}

fn project_columns_unit_ball(d: &mut DMatrix<f64>) {
    for mut col in d.column_iter_mut() {
        let n = col.norm();
        if n > 1.0 {
            // The tiny margin keeps the norm ≤ 1 under any summation order
            // (vector and matrix norms in nalgebra round differently).
            col *= (1.0 - 1e-12) / n;
        }
    }
}

fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().max()
}

/// Learns `cfg.k` bases from `shapes`. Bases are initialized from uniformly
/// sampled training shapes (without replacement when `k ≤ n`), scaled into
/// the unit ball.
pub fn learn_dictionary(shapes: &TrainingSet, cfg: &DictLearnConfig) -> Result<LearnedDictionary> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if !(cfg.lambda >= 0.0) || cfg.lambda.is_infinite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and >= 0, got {}", cfg.lambda)));
    }
    let n = shapes.n();
    let x = shapes.data_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks: Vec<usize> = if cfg.k <= n {
        index::sample(&mut rng, n, cfg.k).into_vec()
    } else {
        (0..cfg.k).map(|_| rng.random_range(0..n)).collect()
    };
    let mut d = DMatrix::from_fn(x.nrows(), cfg.k, |r, i| x[(r, picks[i])]);
    project_columns_unit_ball(&mut d);

    let opts = LassoOptions {
        tol: 1e-8,
        max_iter: cfg.inner_iters.max(1),
    };
    let mut c = DMatrix::zeros(cfg.k, n);
    c = CodingProblem::new(&d, &x).solve(cfg.lambda, cfg.mode, &c, &opts);
    let mut cost = coding_cost(&d, &x, &c, cfg.lambda, cfg.mode);
    let mut trace = vec![cost];

    for _ in 0..cfg.outer_iters {
        // Dictionary step: projected gradient with backtracking.
        let grad = (&d * &c - &x) * c.transpose();
        let fit = 0.5 * (&x - &d * &c).norm_squared();
        let lipschitz = largest_eigenvalue(&(&c * c.transpose()));
        let mut step = cfg.delta2.unwrap_or(if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 });
        let mut d_next = d.clone();
        for _ in 0..60 {
            let mut cand = &d - &grad * step;
            project_columns_unit_ball(&mut cand);
            let delta = &cand - &d;
            let cand_fit = 0.5 * (&x - &cand * &c).norm_squared();
            if cand_fit <= fit + grad.dot(&delta) + delta.norm_squared() / (2.0 * step) + 1e-12 * fit.max(1.0) {
                if cand_fit <= fit {
                    d_next = cand;
                }
                break;
            }
            step *= 0.5;
        }
        d = d_next;

        // Coding step, warm-started; never worse than the current codes.
        c = CodingProblem::new(&d, &x).solve(cfg.lambda, cfg.mode, &c, &opts);
        let next = coding_cost(&d, &x, &c, cfg.lambda, cfg.mode);
        trace.push(next);
        let decrease = (cost - next) / cost.abs().max(f64::MIN_POSITIVE);
        cost = next;
        if decrease < cfg.tol {
            break;
        }
    }

    Ok(LearnedDictionary {
        dictionary: ShapeDictionary::from_vectorized(&d)?,
        coefficients: CoefficientMatrix(c),
        cost_trace: trace,
    })
}

/// Principal subspace of the training shapes.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub mean: Shape3D,
    /// Orthonormal directions as columns, `3p x m`.
    pub components: DMatrix<f64>,
    /// Eigenvalues of the scatter matrix `X_c X_cᵀ`, descending, for every
    /// available direction (not only the kept ones).
    pub eigenvalues: Vec<f64>,
}

impl PcaBasis {
    pub fn m(&self) -> usize {
        self.components.ncols()
    }

    /// Projection onto `mean + span(components)`.
    pub fn reconstruct(&self, shape: &Shape3D) -> Result<Shape3D> {
        ensure_dim("landmark count", self.mean.num_points(), shape.num_points())?;
        let centered = DVector::from_column_slice((shape.points() - self.mean.points()).as_slice());
        let coords = self.components.transpose() * &centered;
        let recon = &self.components * coords + DVector::from_column_slice(self.mean.points().as_slice());
        Shape3D::from_vector(&recon)
    }

    /// `½ Σ_j ‖S_j − reconstruct(S_j)‖²_F`.
    pub fn residual(&self, shapes: &TrainingSet) -> Result<f64> {
        let mut total = 0.0;
        for s in shapes.shapes() {
            total += (s.points() - self.reconstruct(s)?.points()).norm_squared();
        }
        Ok(0.5 * total)
    }
}

/// Top-`m` principal directions, `1 ≤ m ≤ min(3p, n)`.
pub fn pca_basis(shapes: &TrainingSet, m: usize) -> Result<PcaBasis> {
    let x = shapes.data_matrix();
    let limit = x.nrows().min(x.ncols());
    if m == 0 || m > limit {
        return Err(Error::InvalidArgument(format!("PCA needs 1 <= m <= {limit}, got {m}")));
    }
    let mean = shapes.mean_shape();
    let mean_vec = DVector::from_column_slice(mean.points().as_slice());
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        col -= &mean_vec;
    }
    let svd = xc.svd(true, false);
    let u = svd.u.expect("svd u");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let components = DMatrix::from_fn(x.nrows(), m, |r, c| u[(r, order[c])]);
    let eigenvalues = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    Ok(PcaBasis {
        mean,
        components,
        eigenvalues,
    })
}

/// What to evaluate in [`representability_curve`].
#[derive(Debug, Clone, Copy)]
pub enum Representation<'a> {
    /// Sparse coding over a dictionary, one point per `λ`.
    Dictionary(&'a ShapeDictionary, CodingMode),
    /// PCA with `1..=max_components` components, one point per count.
    Pca { max_components: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepresentabilityPoint {
    /// `λ` for dictionaries, the component count for PCA.
    pub parameter: f64,
    pub mean_active_atoms: f64,
    /// `½ Σ_j ‖S_j − Ŝ_j‖²_F`.
    pub error: f64,
}

/// Error versus active atoms. Dictionary points follow `lambda_grid` order;
/// codes are computed from the largest `λ` down with warm starts.
pub fn representability_curve(
    shapes: &TrainingSet,
    representation: Representation<'_>,
    lambda_grid: &[f64],
) -> Result<Vec<RepresentabilityPoint>> {
    match representation {
        Representation::Dictionary(dict, mode) => {
            if lambda_grid.is_empty() {
                return Err(Error::InvalidArgument("lambda grid is empty".into()));
            }
            ensure_dim("landmark count", dict.p(), shapes.p())?;
            let d = dict.vectorized();
            let x = shapes.data_matrix();
            let problem = CodingProblem::new(&d, &x);
            let opts = LassoOptions {
                tol: 1e-10,
                max_iter: 20000,
            };
            let mut order: Vec<usize> = (0..lambda_grid.len()).collect();
            order.sort_by(|&a, &b| lambda_grid[b].total_cmp(&lambda_grid[a]));
            let mut out = vec![None; lambda_grid.len()];
            let mut c = DMatrix::zeros(dict.k(), shapes.n());
            for i in order {
                let lambda = lambda_grid[i];
                if !(lambda >= 0.0) {
                    return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
                }
                c = problem.solve(lambda, mode, &c, &opts);
                let codes = CoefficientMatrix(c.clone());
                out[i] = Some(RepresentabilityPoint {
                    parameter: lambda,
                    mean_active_atoms: codes.mean_active(),
                    error: 0.5 * (&x - &d * &c).norm_squared(),
                });
            }
            Ok(out.into_iter().map(|p| p.expect("every grid point solved")).collect())
        }
        Representation::Pca { max_components } => {
            let full = pca_basis(shapes, max_components)?;
            (1..=max_components)
                .map(|m| {
                    let basis = PcaBasis {
                        mean: full.mean.clone(),
                        components: full.components.columns(0, m).into_owned(),
                        eigenvalues: full.eigenvalues.clone(),
                    };
                    Ok(RepresentabilityPoint {
                        parameter: m as f64,
                        mean_active_atoms: m as f64,
                        error: basis.residual(shapes)?,
                    })
                })
                .collect()
        }
    }
}
