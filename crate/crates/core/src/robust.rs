//! Outlier-robust variant of the convex program:
//!
//! ```text
//! min  ½‖W − Σ M_i B_i − E − T1ᵀ‖²_F + α Σ‖M_i‖₂ + β‖E‖₁
//! ```
//!
//! `E` is a sparse correction for grossly wrong landmarks and `T` a
//! translation, which is estimated here because centering `W` would smear the
//! outliers over every landmark. The ADMM sweep updates `M`, `Z`, `E`, `T`,
//! then the dual `Y`, in that order. Multi-block ADMM has no general
//! convergence guarantee, so hitting the iteration budget is reported through
//! `report.converged` rather than treated as an error.

use nalgebra::{DMatrix, Matrix2xX, Vector2};

use crate::convex::{adapt_mu, prox_blocks, MotionStack, RidgeSolver, SolverConfig, SolverReport};
use crate::error::{ensure_dim, Error, Result};
use crate::prox::soft_threshold;
use crate::shape::{select_columns_2, Landmarks2D, ShapeDictionary};

/// Solver settings: the convex-solver settings plus the outlier weight `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustConfig {
    pub solver: SolverConfig,
    pub beta: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            beta: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    pub motions: MotionStack,
    /// Sparse outlier corrections, `2 x p`; exactly zero at invisible landmarks.
    pub e: Matrix2xX<f64>,
    pub t: Vector2<f64>,
    pub report: SolverReport,
    /// `‖E^{t+1} − E^t‖_F` at the last iteration.
    pub outlier_change: f64,
}

impl RobustSolution {
    /// `W − E − T1ᵀ`: the observations with outliers and translation removed.
    pub fn cleaned(&self, w: &Landmarks2D) -> Landmarks2D {
        let mut pts = w.points() - &self.e;
        for mut col in pts.column_iter_mut() {
            col -= self.t;
        }
        w.with_points(pts)
    }
}

/// `½‖W − M̃B̃ − E − T1ᵀ‖² + αΣ‖M_i‖₂ + β‖E‖₁` over the given (visible) columns.
fn robust_value(
    w: &Matrix2xX<f64>,
    b: &DMatrix<f64>,
    m: &MotionStack,
    e: &Matrix2xX<f64>,
    t: &Vector2<f64>,
    alpha: f64,
    beta: f64,
) -> f64 {
    let mut r = w - m.project(b) - e;
    for mut col in r.column_iter_mut() {
        col -= t;
    }
    0.5 * r.norm_squared() + alpha * m.spectral_norm_sum() + beta * e.iter().map(|v| v.abs()).sum::<f64>()
}

fn row_means(m: &Matrix2xX<f64>) -> Vector2<f64> {
    let n = m.ncols().max(1) as f64;
    Vector2::new(m.row(0).sum() / n, m.row(1).sum() / n)
}

fn subtract_translation(m: &Matrix2xX<f64>, t: &Vector2<f64>) -> Matrix2xX<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= t;
    }
    out
}

/// Runs the robust ADMM. `W` must not be centralized beforehand.
pub fn solve_robust(w: &Landmarks2D, dict: &ShapeDictionary, cfg: &RobustConfig) -> Result<RobustSolution> {
    let sc = &cfg.solver;
    sc.validate()?;
    if !(cfg.beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, got {}", cfg.beta)));
    }
    ensure_dim("landmark count", dict.p(), w.num_points())?;
    let visible = w.visible_indices();
    if visible.is_empty() {
        return Err(Error::NoObservations);
    }
    let wv = select_columns_2(w.points(), &visible);
    let b = dict.stacked_columns(&visible);
    let k = dict.k();
    let n = visible.len();
    let bt = b.transpose();
    let mut ridge = RidgeSolver::new(&b);

    let mut m = MotionStack::zeros(k);
    let mut z = Matrix2xX::<f64>::zeros(3 * k);
    let mut y = Matrix2xX::<f64>::zeros(3 * k);
    let mut e = Matrix2xX::<f64>::zeros(n);
    let mut t = Vector2::<f64>::zeros();
    let mut mu = sc.mu0;

    let mut trace = Vec::new();
    let (mut primal, mut dual, mut scale, mut e_change) = (f64::INFINITY, f64::INFINITY, 1.0, f64::INFINITY);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=sc.max_iter {
        iterations = it;
        m = prox_blocks(&(&z - &y / mu), sc.alpha / mu);
        let m_stacked = m.stacked();

        let target = subtract_translation(&(&wv - &e), &t);
        let z_next = ridge.solve(&(&target * &bt + &m_stacked * mu + &y), mu)?;
        if z_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDivergence);
        }
        let zb = &z_next * &b;

        let e_next = soft_threshold(&subtract_translation(&(&wv - &zb), &t), cfg.beta);
        t = row_means(&(&wv - &zb - &e_next));
        y += (&m_stacked - &z_next) * mu;

        primal = (&m_stacked - &z_next).norm();
        dual = mu * (&z_next - &z).norm();
        scale = m_stacked.norm().max(z_next.norm()).max(1.0);
        e_change = (&e_next - &e).norm();
        z = z_next;
        e = e_next;
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalDivergence);
        }
        trace.push(robust_value(&wv, &b, &m, &e, &t, sc.alpha, cfg.beta));
        let bound = sc.tol * scale;
        if primal <= bound && dual <= bound && e_change <= bound {
            converged = true;
            break;
        }
        mu = adapt_mu(sc, mu, primal, dual);
    }

    let mut e_full = Matrix2xX::zeros(w.num_points());
    for (c, &j) in visible.iter().enumerate() {
        e_full.set_column(j, &e.column(c));
    }
    let objective = *trace.last().expect("at least one iteration");
    Ok(RobustSolution {
        motions: m,
        e: e_full,
        t,
        report: SolverReport {
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            objective,
            converged,
            objective_trace: trace,
            residual_scale: scale,
            constraint_residual: None,
            final_mu: mu,
        },
        outlier_change: e_change,
    })
}

/// Landmark `j` is an outlier iff `‖E[:, j]‖₂ > threshold`.
pub fn classify_outliers(sol: &RobustSolution, threshold: f64) -> Vec<bool> {
    sol.e.column_iter().map(|c| c.norm() > threshold).collect()
}
