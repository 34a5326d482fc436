//! From motion blocks back to a 3D shape.
//!
//! * [`direct_reconstruct`] reads `c_i` and a rotation off every block
//!   independently (each basis keeps its own rotation).
//! * [`sync_rotations`] fits one shared rotation and nonnegative weights to
//!   all blocks, `min Σ‖M_i − c_i R̄‖²_F` with `R̄R̄ᵀ = I₂`.
//! * [`alternating_minimize`] is the classic nonconvex baseline: alternate a
//!   nonnegative lasso in `c` with a rotation update.
//! * [`refine_reconstruct`] chains synchronization and alternation, using
//!   the convex solution as initialization.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2xX, Matrix3, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convex::MotionStack;
use crate::error::{ensure_dim, Error, Result};
use crate::experiments::random_rotation_zyz;
use crate::lasso::{CodingMode, GramLasso, LassoOptions};
use crate::prox::{soft_threshold, spectral_norm_2x3, stiefel_projection};
use crate::shape::{compose_shape, select_columns_2, Coefficients, Landmarks2D, Rotation, Shape3D, ShapeDictionary};

/// Blocks with spectral norm at or below this are treated as zero.
pub const BLOCK_EPS: f64 = 1e-12;

/// Relative synchronization residual `Σ‖M_i − c_iR̄‖² / Σ‖M_i‖²` above which
/// the blocks are considered too inconsistent for a shared rotation.
pub const SYNC_WARN_RATIO: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct DirectReconstruction {
    /// `Σ c_i R_i B_i`, in the camera frame.
    pub shape: Shape3D,
    pub coefficients: Coefficients,
    /// One rotation per basis; identity for skipped (zero) blocks.
    pub rotations: Vec<Rotation>,
}

/// Reads `c_i = ‖M_i‖₂` and `R_i` off each block, completing the third row
/// by a cross product. Blocks that are not exactly `c_i` times a Stiefel
/// matrix are projected onto the nearest one first, so every returned
/// rotation is proper.
pub fn direct_reconstruct(m: &MotionStack, dict: &ShapeDictionary) -> Result<DirectReconstruction> {
    ensure_dim("motion blocks", dict.k(), m.k())?;
    let mut points = nalgebra::Matrix3xX::zeros(dict.p());
    let mut coeffs = DVector::zeros(m.k());
    let mut rotations = Vec::with_capacity(m.k());
    for (i, block) in m.blocks().iter().enumerate() {
        let c = spectral_norm_2x3(block);
        if c <= BLOCK_EPS {
            rotations.push(Rotation::identity());
            continue;
        }
        let r = Rotation::from_top_rows(&(block / c));
        points += r.matrix() * dict.basis(i).points() * c;
        coeffs[i] = c;
        rotations.push(r);
    }
    Ok(DirectReconstruction {
        shape: Shape3D::new(points)?,
        coefficients: Coefficients(coeffs),
        rotations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncOptions {
    /// Total number of starts; the first is always the deterministic
    /// largest-block initialization, the rest are seeded random rotations.
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            restarts: 1,
            max_iter: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synchronization {
    pub coefficients: Coefficients,
    /// Full rotation whose top two rows are the shared `R̄`.
    pub rotation: Rotation,
    /// `Σ‖M_i − c_i R̄‖²_F` at the returned point.
    pub residual: f64,
    /// Objective after every half-step of the winning start.
    pub trace: Vec<f64>,
}

impl Synchronization {
    /// Residual relative to `Σ‖M_i‖²_F`.
    pub fn relative_residual(&self, m: &MotionStack) -> f64 {
        self.residual / m.frobenius_norm().powi(2).max(f64::MIN_POSITIVE)
    }
}

fn sync_objective(m: &MotionStack, c: &DVector<f64>, rbar: &Matrix2x3<f64>) -> f64 {
    m.blocks()
        .iter()
        .zip(c.iter())
        .map(|(b, &ci)| (b - rbar * ci).norm_squared())
        .sum()
}

fn sync_from(m: &MotionStack, init: Matrix2x3<f64>, max_iter: usize) -> (DVector<f64>, Matrix2x3<f64>, Vec<f64>) {
    let mut rbar = init;
    let mut c = DVector::zeros(m.k());
    let mut trace = Vec::new();
    let mut prev = f64::INFINITY;
    for _ in 0..max_iter {
        // Since ‖R̄‖²_F = 2, the minimizing weight is ⟨M_i, R̄⟩ / 2.
        for (i, b) in m.blocks().iter().enumerate() {
            c[i] = (b.dot(&rbar) / 2.0).max(0.0);
        }
        trace.push(sync_objective(m, &c, &rbar));
        let g: Matrix2x3<f64> = m.blocks().iter().zip(c.iter()).map(|(b, &ci)| b * ci).sum();
        if g.norm() == 0.0 {
            break;
        }
        rbar = stiefel_projection(&g);
        let value = sync_objective(m, &c, &rbar);
        trace.push(value);
        if prev - value <= 1e-15 * (1.0 + value) {
            break;
        }
        prev = value;
    }
    for (i, b) in m.blocks().iter().enumerate() {
        c[i] = (b.dot(&rbar) / 2.0).max(0.0);
    }
    trace.push(sync_objective(m, &c, &rbar));
    (c, rbar, trace)
}

/// Fits a single rotation and nonnegative weights to all blocks with the
/// default options (one deterministic start).
pub fn sync_rotations(m: &MotionStack) -> Result<Synchronization> {
    sync_rotations_with(m, &SyncOptions::default())
}

pub fn sync_rotations_with(m: &MotionStack, opts: &SyncOptions) -> Result<Synchronization> {
    let (largest, norm) = m
        .blocks()
        .iter()
        .map(spectral_norm_2x3)
        .enumerate()
        .fold((0, 0.0), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
    if norm <= 0.0 {
        return Err(Error::NothingToSynchronize);
    }
    let mut best = sync_from(m, stiefel_projection(m.block(largest)), opts.max_iter);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 1..opts.restarts.max(1) {
        let init = random_rotation_zyz(&mut rng).top_rows();
        let cand = sync_from(m, init, opts.max_iter);
        if cand.2.last() < best.2.last() {
            best = cand;
        }
    }
    let (c, rbar, trace) = best;
    Ok(Synchronization {
        coefficients: Coefficients(c),
        rotation: Rotation::from_top_rows(&rbar),
        residual: *trace.last().expect("non-empty trace"),
        trace,
    })
}

/// How the shared rotation is updated inside [`alternating_minimize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationUpdate {
    /// `R̄ = polar(W Sᵀ)`: cheap, but only exact when `S Sᵀ ∝ I`.
    SvdProjection,
    /// Riemannian gradient descent on the Stiefel manifold with a polar
    /// retraction and Armijo backtracking; never increases the objective.
    #[default]
    StiefelGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternatingConfig {
    pub alpha: f64,
    pub rot_mode: RotationUpdate,
    pub max_outer: usize,
    /// Stop when the relative objective decrease drops below this.
    pub tol: f64,
    pub lasso: LassoOptions,
    /// When set, also estimate a sparse outlier matrix `E` (weight `β`) and
    /// a translation `T`; `W` should then not be centralized.
    pub beta: Option<f64>,
}

impl Default for AlternatingConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            rot_mode: RotationUpdate::default(),
            max_outer: 200,
            tol: 1e-8,
            lasso: LassoOptions::default(),
            beta: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlternatingResult {
    pub coefficients: Coefficients,
    pub rotation: Rotation,
    pub objective: f64,
    /// Objective at the initialization followed by one entry per outer
    /// iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Outlier matrix (`2 x p`, zero at invisible landmarks) in robust mode.
    pub e: Option<Matrix2xX<f64>>,
    pub t: Option<Vector2<f64>>,
}

struct AltProblem<'a> {
    w: Matrix2xX<f64>,
    /// Visible columns of each basis.
    bases: Vec<nalgebra::Matrix3xX<f64>>,
    cfg: &'a AlternatingConfig,
}

impl AltProblem<'_> {
    fn shape(&self, c: &DVector<f64>) -> nalgebra::Matrix3xX<f64> {
        let mut s = nalgebra::Matrix3xX::zeros(self.w.ncols());
        for (b, &ci) in self.bases.iter().zip(c.iter()) {
            if ci != 0.0 {
                s += b * ci;
            }
        }
        s
    }

    /// `W − E − T1ᵀ`.
    fn target(&self, e: &Matrix2xX<f64>, t: &Vector2<f64>) -> Matrix2xX<f64> {
        let mut out = &self.w - e;
        for mut col in out.column_iter_mut() {
            col -= t;
        }
        out
    }

    fn objective(&self, c: &DVector<f64>, r: &Matrix2x3<f64>, e: &Matrix2xX<f64>, t: &Vector2<f64>) -> f64 {
        let resid = self.target(e, t) - r * self.shape(c);
        let mut v = 0.5 * resid.norm_squared() + self.cfg.alpha * c.sum();
        if let Some(beta) = self.cfg.beta {
            v += beta * e.iter().map(|x| x.abs()).sum::<f64>();
        }
        v
    }

    fn update_c(&self, c: &DVector<f64>, r: &Matrix2x3<f64>, target: &Matrix2xX<f64>) -> DVector<f64> {
        let k = self.bases.len();
        let n = self.w.ncols();
        let mut a = DMatrix::zeros(2 * n, k);
        for (i, b) in self.bases.iter().enumerate() {
            let p = r * b;
            a.column_mut(i).copy_from_slice(p.as_slice());
        }
        let gram = a.transpose() * &a;
        let h = a.transpose() * DMatrix::from_column_slice(2 * n, 1, target.as_slice());
        let problem = GramLasso {
            gram: &gram,
            h: &h,
            offset: 0.5 * target.norm_squared(),
            lambda: self.cfg.alpha,
            mode: CodingMode::Nonnegative,
        };
        let init = DMatrix::from_column_slice(k, 1, c.as_slice());
        let sol = problem.solve(&init, &self.cfg.lasso);
        DVector::from_column_slice(sol.c.as_slice())
    }

    fn update_r(&self, r: &Matrix2x3<f64>, s: &nalgebra::Matrix3xX<f64>, target: &Matrix2xX<f64>) -> Matrix2x3<f64> {
        match self.cfg.rot_mode {
            RotationUpdate::SvdProjection => {
                let g: Matrix2x3<f64> = target * s.transpose();
                if g.norm() == 0.0 {
                    *r
                } else {
                    stiefel_projection(&g)
                }
            }
            RotationUpdate::StiefelGradient => stiefel_descent(r, s, target),
        }
    }
}

/// Minimizes `½‖W − R S‖²` over row-orthonormal `R` (2x3) by projected
/// gradient steps with Armijo backtracking.
fn stiefel_descent(r0: &Matrix2x3<f64>, s: &nalgebra::Matrix3xX<f64>, w: &Matrix2xX<f64>) -> Matrix2x3<f64> {
    let sst: Matrix3<f64> = s * s.transpose();
    let wst: Matrix2x3<f64> = w * s.transpose();
    let f = |r: &Matrix2x3<f64>| 0.5 * (w - r * s).norm_squared();
    let lipschitz = sst.symmetric_eigenvalues().max();
    if lipschitz <= 0.0 {
        return *r0;
    }
    let mut r = *r0;
    let mut fr = f(&r);
    for _ in 0..100 {
        let g = r * sst - wst;
        let grt = g * r.transpose();
        let xi = g - (grt + grt.transpose()) * 0.5 * r;
        let xi_sq = xi.norm_squared();
        if xi_sq <= 1e-24 * (1.0 + wst.norm_squared()) {
            break;
        }
        let mut step = 1.0 / lipschitz;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = stiefel_projection(&(r - xi * step));
            let fc = f(&cand);
            if fc <= fr - 1e-4 * step * xi_sq {
                r = cand;
                fr = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    r
}

/// Minimizes `½‖W − R̄ Σ c_i B_i‖² + α Σ c_i` over `c ≥ 0` and row-orthonormal
/// `R̄` by alternation. `W` should be centralized (visible landmarks only).
pub fn alternating_minimize(
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    init_c: &Coefficients,
    init_r: &Rotation,
    alpha: f64,
    rot_mode: RotationUpdate,
) -> Result<AlternatingResult> {
    let cfg = AlternatingConfig {
        alpha,
        rot_mode,
        ..AlternatingConfig::default()
    };
    alternating_minimize_with(w, dict, init_c, init_r, &cfg)
}

pub fn alternating_minimize_with(
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    init_c: &Coefficients,
    init_r: &Rotation,
    cfg: &AlternatingConfig,
) -> Result<AlternatingResult> {
    ensure_dim("landmark count", dict.p(), w.num_points())?;
    ensure_dim("coefficients", dict.k(), init_c.len())?;
    if !(cfg.alpha >= 0.0) || cfg.beta.is_some_and(|b| !(b >= 0.0)) {
        return Err(Error::InvalidArgument("alpha and beta must be >= 0".into()));
    }
    let visible = w.visible_indices();
    if visible.is_empty() {
        return Err(Error::NoObservations);
    }
    let problem = AltProblem {
        w: select_columns_2(w.points(), &visible),
        bases: dict
            .bases()
            .iter()
            .map(|b| {
                nalgebra::Matrix3xX::from_fn(visible.len(), |r, j| b.points()[(r, visible[j])])
            })
            .collect(),
        cfg,
    };
    let n = visible.len();
    let mut c = init_c.0.map(|v| v.max(0.0));
    let mut r = init_r.top_rows();
    let mut e = Matrix2xX::zeros(n);
    // Robust mode starts from the coordinate-wise median, which outliers
    // cannot drag far; plain mode expects a centralized W.
    let mut t = if cfg.beta.is_some() {
        Vector2::new(median(problem.w.row(0).iter()), median(problem.w.row(1).iter()))
    } else {
        Vector2::zeros()
    };

    let mut obj = problem.objective(&c, &r, &e, &t);
    let mut trace = vec![obj];
    let mut iterations = 0;
    for it in 1..=cfg.max_outer {
        iterations = it;
        let target = problem.target(&e, &t);
        c = problem.update_c(&c, &r, &target);
        let s = problem.shape(&c);
        r = problem.update_r(&r, &s, &target);
        if let Some(beta) = cfg.beta {
            let rs = r * &s;
            let mut resid = &problem.w - &rs;
            for mut col in resid.column_iter_mut() {
                col -= t;
            }
            e = soft_threshold(&resid, beta);
            let rest = &problem.w - &rs - &e;
            t = Vector2::new(rest.row(0).sum() / n as f64, rest.row(1).sum() / n as f64);
        }
        let next = problem.objective(&c, &r, &e, &t);
        if !next.is_finite() {
            return Err(Error::NumericalDivergence);
        }
        trace.push(next);
        let decrease = obj - next;
        obj = next;
        if decrease < cfg.tol * obj.abs().max(1.0) {
            break;
        }
    }

    let (e_out, t_out) = if cfg.beta.is_some() {
        let mut full = Matrix2xX::zeros(w.num_points());
        for (col, &j) in visible.iter().enumerate() {
            full.set_column(j, &e.column(col));
        }
        (Some(full), Some(t))
    } else {
        (None, None)
    };
    Ok(AlternatingResult {
        coefficients: Coefficients(c),
        rotation: Rotation::from_top_rows(&r),
        objective: obj,
        trace,
        iterations,
        e: e_out,
        t: t_out,
    })
}

fn median<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let mut v: Vec<f64> = values.copied().collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `½‖W − R̄ Σ c_i B_i‖² + α Σ c_i` over visible landmarks.
pub fn alternating_objective(
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    c: &Coefficients,
    r: &Rotation,
    alpha: f64,
) -> Result<f64> {
    ensure_dim("landmark count", dict.p(), w.num_points())?;
    let shape = compose_shape(dict, c)?;
    let pred = r.top_rows() * shape.points();
    let visible = w.visible_indices();
    let resid: f64 = visible
        .iter()
        .map(|&j| (w.points().column(j) - pred.column(j)).norm_squared())
        .sum();
    Ok(0.5 * resid + alpha * c.0.sum())
}

/// Baseline initialization: nonnegative least-squares fit of the dictionary
/// to `mean` (rotation is taken to be the identity by the caller).
pub fn mean_shape_coefficients(dict: &ShapeDictionary, mean: &Shape3D) -> Result<Coefficients> {
    ensure_dim("landmark count", dict.p(), mean.num_points())?;
    let d = dict.vectorized();
    let x = DMatrix::from_column_slice(3 * dict.p(), 1, mean.points().as_slice());
    let gram = d.transpose() * &d;
    let h = d.transpose() * &x;
    let problem = GramLasso {
        gram: &gram,
        h: &h,
        offset: 0.5 * x.norm_squared(),
        lambda: 0.0,
        mode: CodingMode::Nonnegative,
    };
    let sol = problem.solve(
        &DMatrix::zeros(dict.k(), 1),
        &LassoOptions {
            tol: 1e-12,
            max_iter: 20000,
        },
    );
    Ok(Coefficients(DVector::from_column_slice(sol.c.as_slice())))
}

#[derive(Debug, Clone)]
pub struct Refinement {
    /// `Σ c_i B_i` in the model frame.
    pub shape: Shape3D,
    pub coefficients: Coefficients,
    pub rotation: Rotation,
    /// Alternating objective at the synchronized initialization.
    pub pre_objective: f64,
    pub post_objective: f64,
    pub sync_residual: f64,
    /// Set when the blocks disagree too much for a shared rotation to be
    /// meaningful (relative sync residual above [`SYNC_WARN_RATIO`]).
    pub degenerate: bool,
    pub trace: Vec<f64>,
    /// Outlier matrix and translation when run in robust mode.
    pub e: Option<Matrix2xX<f64>>,
    pub t: Option<Vector2<f64>>,
}

impl Refinement {
    /// The shape rotated into the camera frame.
    pub fn camera_shape(&self) -> Shape3D {
        self.shape.rotated(&self.rotation)
    }
}

/// Synchronizes the convex solution into one rotation and refines it by
/// alternation (default settings, Stiefel rotation updates).
pub fn refine_reconstruct(
    m: &MotionStack,
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    alpha: f64,
) -> Result<Refinement> {
    let cfg = AlternatingConfig {
        alpha,
        ..AlternatingConfig::default()
    };
    refine_reconstruct_with(m, w, dict, &cfg)
}

pub fn refine_reconstruct_with(
    m: &MotionStack,
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    cfg: &AlternatingConfig,
) -> Result<Refinement> {
    ensure_dim("motion blocks", dict.k(), m.k())?;
    let sync = sync_rotations(m)?;
    let degenerate = sync.relative_residual(m) > SYNC_WARN_RATIO;
    let alt = alternating_minimize_with(w, dict, &sync.coefficients, &sync.rotation, cfg)?;
    Ok(Refinement {
        shape: compose_shape(dict, &alt.coefficients)?,
        pre_objective: alt.trace[0],
        post_objective: alt.objective,
        coefficients: alt.coefficients,
        rotation: alt.rotation,
        sync_residual: sync.residual,
        degenerate,
        trace: alt.trace,
        e: alt.e,
        t: alt.t,
    })
}
