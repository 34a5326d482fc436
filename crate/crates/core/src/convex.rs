//! ADMM for the spectral-norm regularized least-squares program
//!
//! ```text
//! min_M  ½‖W − Σ M_i B_i‖²_F + α Σ ‖M_i‖₂
//! ```
//!
//! and its equality-constrained (noiseless) counterpart
//! `min Σ‖M_i‖₂ s.t. W = Σ M_i B_i`.
//!
//! The splitting introduces `Z = M̃` and alternates a block-separable
//! proximal step on `M̃`, a closed-form step on `Z` and a dual ascent step.
//! Invisible landmarks are dropped from both `W` and `B̃` before solving.

use nalgebra::{Cholesky, DMatrix, Dyn, Matrix2x3, Matrix2xX};

use crate::error::{ensure_dim, Error, Result};
use crate::prox::{prox_spectral, spectral_norm_2x3};
use crate::shape::{select_columns_2, Landmarks2D, ShapeDictionary};

/// `k` motion blocks `M_i ∈ R^{2x3}`; stacked form `M̃ = [M_1 … M_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionStack {
    blocks: Vec<Matrix2x3<f64>>,
}

impl MotionStack {
    pub fn new(blocks: Vec<Matrix2x3<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("motion stack needs at least one block".into()));
        }
        if blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::NumericalDivergence);
        }
        Ok(Self { blocks })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            blocks: vec![Matrix2x3::zeros(); k.max(1)],
        }
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Matrix2x3<f64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Matrix2x3<f64> {
        &self.blocks[i]
    }

    /// `M̃`, shape `2 x 3k`.
    pub fn stacked(&self) -> Matrix2xX<f64> {
        let mut m = Matrix2xX::zeros(3 * self.k());
        for (i, b) in self.blocks.iter().enumerate() {
            m.fixed_columns_mut::<3>(3 * i).copy_from(b);
        }
        m
    }

    pub fn from_stacked(m: &Matrix2xX<f64>) -> Result<Self> {
        if m.ncols() % 3 != 0 {
            return Err(Error::InvalidArgument("stacked motion width is not a multiple of 3".into()));
        }
        Self::new(
            (0..m.ncols() / 3)
                .map(|i| m.fixed_columns::<3>(3 * i).into_owned())
                .collect(),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    /// `Σ ‖M_i‖₂`.
    pub fn spectral_norm_sum(&self) -> f64 {
        self.blocks.iter().map(spectral_norm_2x3).sum()
    }

    /// `M̃ B̃`, the 2D shape explained by the stack.
    pub fn project(&self, stacked_bases: &DMatrix<f64>) -> Matrix2xX<f64> {
        let mut out = Matrix2xX::zeros(stacked_bases.ncols());
        for (i, m) in self.blocks.iter().enumerate() {
            out += m * stacked_bases.rows(3 * i, 3);
        }
        out
    }
}

/// ADMM parameters. Defaults: `alpha = 1`, `mu0 = 1`, `tol = 1e-4`,
/// `max_iter = 500`, adaptive step with ratio 10 and factor 2.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub mu0: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub adaptive_mu: bool,
    pub mu_ratio: f64,
    pub mu_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            mu0: 1.0,
            tol: 1e-4,
            max_iter: 500,
            adaptive_mu: true,
            mu_ratio: 10.0,
            mu_factor: 2.0,
        }
    }
}

impl SolverConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.mu0 > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument("mu0, tol and max_iter must be positive".into()));
        }
        if !(self.mu_ratio > 0.0) || !(self.mu_factor > 0.0) {
            return Err(Error::InvalidArgument("mu_ratio and mu_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Iterates of the splitting: primal `M̃`, auxiliary `Z`, dual `Y`, step `μ`.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub m: MotionStack,
    pub z: Matrix2xX<f64>,
    pub y: Matrix2xX<f64>,
    pub mu: f64,
}

impl AdmmState {
    pub fn new(k: usize, mu: f64) -> Self {
        Self {
            m: MotionStack::zeros(k),
            z: Matrix2xX::zeros(3 * k),
            y: Matrix2xX::zeros(3 * k),
            mu,
        }
    }
}

/// Convergence record returned by every ADMM solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// `‖M̃ − Z‖_F` at the last iteration.
    pub primal_residual: f64,
    /// `μ ‖Z^{t+1} − Z^t‖_F` at the last iteration.
    pub dual_residual: f64,
    pub objective: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    /// `max(‖M̃‖_F, ‖Z‖_F, 1)`; residuals are compared against `tol * scale`.
    pub residual_scale: f64,
    /// `‖W − M̃B̃‖_F` for the equality-constrained solver, `None` otherwise.
    pub constraint_residual: Option<f64>,
    pub final_mu: f64,
}

/// `½‖W − Σ M_i B_i‖²_F + α Σ‖M_i‖₂` over visible landmarks.
pub fn objective_penalized(
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    m: &MotionStack,
    alpha: f64,
) -> Result<f64> {
    ensure_dim("landmark count", dict.p(), w.num_points())?;
    ensure_dim("motion blocks", dict.k(), m.k())?;
    let visible = w.visible_indices();
    let b = dict.stacked_columns(&visible);
    let wv = w.visible_points();
    Ok(penalized_value(&wv, &b, m, alpha))
}

pub(crate) fn penalized_value(
    w: &Matrix2xX<f64>,
    b: &DMatrix<f64>,
    m: &MotionStack,
    alpha: f64,
) -> f64 {
    let r = w - m.project(b);
    0.5 * r.norm_squared() + alpha * m.spectral_norm_sum()
}

/// Proximal step: `M_i = D_{α/μ}(Q_i)` with `Q = Z − Y/μ`, block by block.
pub fn update_m(state: &AdmmState, alpha: f64) -> MotionStack {
    let q = &state.z - &state.y / state.mu;
    prox_blocks(&q, alpha / state.mu)
}

pub(crate) fn prox_blocks(q: &Matrix2xX<f64>, lambda: f64) -> MotionStack {
    let blocks = (0..q.ncols() / 3)
        .map(|i| prox_spectral(&q.fixed_columns::<3>(3 * i).into_owned(), lambda))
        .collect();
    MotionStack { blocks }
}

/// `Z = (W B̃ᵀ + μ M̃ + Y)(B̃B̃ᵀ + μI)⁻¹` over visible landmarks.
pub fn update_z(
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    m: &MotionStack,
    y: &Matrix2xX<f64>,
    mu: f64,
) -> Result<Matrix2xX<f64>> {
    ensure_dim("landmark count", dict.p(), w.num_points())?;
    ensure_dim("motion blocks", dict.k(), m.k())?;
    ensure_dim("dual width", 3 * dict.k(), y.ncols())?;
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be > 0, got {mu}")));
    }
    let visible = w.visible_indices();
    let b = dict.stacked_columns(&visible);
    let mut solver = RidgeSolver::new(&b);
    let wbt = w.visible_points() * b.transpose();
    solver.solve(&(wbt + m.stacked() * mu + y), mu)
}

/// Solves `Z (B̃B̃ᵀ + μI) = R`, caching the Cholesky factor per `μ`.
pub(crate) struct RidgeSolver {
    gram: DMatrix<f64>,
    cached: Option<(f64, Cholesky<f64, Dyn>)>,
}

impl RidgeSolver {
    pub(crate) fn new(b: &DMatrix<f64>) -> Self {
        Self {
            gram: b * b.transpose(),
            cached: None,
        }
    }

    pub(crate) fn solve(&mut self, rhs: &Matrix2xX<f64>, mu: f64) -> Result<Matrix2xX<f64>> {
        if self.cached.as_ref().map(|(m, _)| *m) != Some(mu) {
            let n = self.gram.nrows();
            let a = &self.gram + DMatrix::identity(n, n) * mu;
            let chol = Cholesky::new(a).ok_or(Error::NumericalDivergence)?;
            self.cached = Some((mu, chol));
        }
        let (_, chol) = self.cached.as_ref().expect("factor cached above");
        // The system matrix is symmetric: Zᵀ = A⁻¹ Rᵀ.
        let zt = chol.solve(&rhs.transpose());
        Ok(zt.transpose())
    }
}

struct Residuals {
    primal: f64,
    dual: f64,
    scale: f64,
}

fn residuals(m: &Matrix2xX<f64>, z: &Matrix2xX<f64>, z_prev: &Matrix2xX<f64>, mu: f64) -> Residuals {
    Residuals {
        primal: (m - z).norm(),
        dual: mu * (z - z_prev).norm(),
        scale: m.norm().max(z.norm()).max(1.0),
    }
}

/// Residual balancing. Returns the new step; the unscaled dual `Y` needs
/// no rescaling because every update uses `Y/μ` with the current `μ`.
pub(crate) fn adapt_mu(cfg: &SolverConfig, mu: f64, primal: f64, dual: f64) -> f64 {
    if !cfg.adaptive_mu {
        mu
    } else if primal > cfg.mu_ratio * dual {
        mu * cfg.mu_factor
    } else if dual > cfg.mu_ratio * primal {
        mu / cfg.mu_factor
    } else {
        mu
    }
}

fn check_finite(m: &Matrix2xX<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalDivergence)
    }
}

fn visible_problem(w: &Landmarks2D, dict: &ShapeDictionary) -> Result<(Matrix2xX<f64>, DMatrix<f64>)> {
    ensure_dim("landmark count", dict.p(), w.num_points())?;
    let visible = w.visible_indices();
    if visible.is_empty() {
        return Err(Error::NoObservations);
    }
    Ok((select_columns_2(w.points(), &visible), dict.stacked_columns(&visible)))
}

/// Solves the penalized program. `W` should be centralized over its visible
/// landmarks. Hitting `max_iter` is not an error: the last iterate is
/// returned with `converged = false`.
pub fn solve_penalized(
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    cfg: &SolverConfig,
) -> Result<(MotionStack, SolverReport)> {
    cfg.validate()?;
    let (wv, b) = visible_problem(w, dict)?;
    let k = dict.k();
    let mut ridge = RidgeSolver::new(&b);
    let wbt = &wv * b.transpose();

    let mut state = AdmmState::new(k, cfg.mu0);
    let mut trace = Vec::new();
    let mut last = Residuals {
        primal: f64::INFINITY,
        dual: f64::INFINITY,
        scale: 1.0,
    };
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        iterations = it;
        state.m = update_m(&state, cfg.alpha);
        let m_stacked = state.m.stacked();
        let z_next = ridge.solve(&(&wbt + &m_stacked * state.mu + &state.y), state.mu)?;
        check_finite(&z_next)?;
        state.y += (&m_stacked - &z_next) * state.mu;
        last = residuals(&m_stacked, &z_next, &state.z, state.mu);
        state.z = z_next;
        trace.push(penalized_value(&wv, &b, &state.m, cfg.alpha));
        if last.primal <= cfg.tol * last.scale && last.dual <= cfg.tol * last.scale {
            converged = true;
            break;
        }
        state.mu = adapt_mu(cfg, state.mu, last.primal, last.dual);
    }
    let objective = *trace.last().expect("at least one iteration");
    Ok((
        state.m,
        SolverReport {
            iterations,
            primal_residual: last.primal,
            dual_residual: last.dual,
            objective,
            converged,
            objective_trace: trace,
            residual_scale: last.scale,
            constraint_residual: None,
            final_mu: state.mu,
        },
    ))
}

/// Euclidean projection onto the affine set `{Z : Z B̃ = W}`:
/// `Z = W B̃⁺ + Q (I − B̃B̃⁺)`, with `B̃B̃⁺ = U_r U_rᵀ`.
struct AffineProjector {
    particular: Matrix2xX<f64>,
    range_basis: DMatrix<f64>,
}

impl AffineProjector {
    fn new(w: &Matrix2xX<f64>, b: &DMatrix<f64>) -> Result<Self> {
        let svd = b.clone().svd(true, true);
        let u = svd.u.as_ref().expect("svd u");
        let v_t = svd.v_t.as_ref().expect("svd v_t");
        let s = &svd.singular_values;
        let s_max = s.max();
        let cutoff = s_max * f64::EPSILON * b.nrows().max(b.ncols()) as f64;
        let rank_idx: Vec<usize> = (0..s.len()).filter(|&i| s[i] > cutoff && s[i] > 0.0).collect();
        let w_norm = w.norm();
        if rank_idx.is_empty() {
            return if w_norm == 0.0 {
                Ok(Self {
                    particular: Matrix2xX::zeros(b.nrows()),
                    range_basis: DMatrix::zeros(b.nrows(), 0),
                })
            } else {
                Err(Error::DegenerateConstraint)
            };
        }
        let r = rank_idx.len();
        let range_basis = DMatrix::from_fn(b.nrows(), r, |row, c| u[(row, rank_idx[c])]);
        // W B̃⁺ = W V_r Σ_r⁻¹ U_rᵀ.
        let mut wv = Matrix2xX::zeros(r);
        for (c, &i) in rank_idx.iter().enumerate() {
            let v_i = v_t.row(i);
            let coeff = (w * v_i.transpose()) / s[i];
            wv.set_column(c, &coeff);
        }
        let particular = &wv * range_basis.transpose();
        let mismatch = (&particular * b - w).norm();
        if mismatch > 1e-8 * w_norm.max(f64::MIN_POSITIVE) && mismatch > 1e-12 {
            return Err(Error::DegenerateConstraint);
        }
        Ok(Self {
            particular,
            range_basis,
        })
    }

    fn project(&self, q: &Matrix2xX<f64>) -> Matrix2xX<f64> {
        let along = (q * &self.range_basis) * self.range_basis.transpose();
        q - along + &self.particular
    }
}

/// Solves `min Σ‖M_i‖₂ s.t. W = Σ M_i B_i` (visible landmarks only).
///
/// Convergence additionally requires the equality residual
/// `‖W − M̃B̃‖_F ≤ tol · ‖W‖_F` on the returned (sparse) iterate.
pub fn solve_noiseless(
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    cfg: &SolverConfig,
) -> Result<(MotionStack, SolverReport)> {
    cfg.validate()?;
    let (wv, b) = visible_problem(w, dict)?;
    let k = dict.k();
    let projector = AffineProjector::new(&wv, &b)?;
    let w_norm = wv.norm();

    let mut state = AdmmState::new(k, cfg.mu0);
    let mut trace = Vec::new();
    let mut last = Residuals {
        primal: f64::INFINITY,
        dual: f64::INFINITY,
        scale: 1.0,
    };
    let mut eq_residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_iter {
        iterations = it;
        state.m = update_m(&state, 1.0);
        let m_stacked = state.m.stacked();
        let z_next = projector.project(&(&m_stacked + &state.y / state.mu));
        check_finite(&z_next)?;
        state.y += (&m_stacked - &z_next) * state.mu;
        last = residuals(&m_stacked, &z_next, &state.z, state.mu);
        state.z = z_next;
        trace.push(state.m.spectral_norm_sum());
        if last.primal <= cfg.tol * last.scale && last.dual <= cfg.tol * last.scale {
            eq_residual = (&wv - state.m.project(&b)).norm();
            if eq_residual <= cfg.tol * w_norm.max(1e-300) {
                converged = true;
                break;
            }
        }
        state.mu = adapt_mu(cfg, state.mu, last.primal, last.dual);
    }
    if !converged {
        eq_residual = (&wv - state.m.project(&b)).norm();
    }
    let objective = *trace.last().expect("at least one iteration");
    Ok((
        state.m,
        SolverReport {
            iterations,
            primal_residual: last.primal,
            dual_residual: last.dual,
            objective,
            converged,
            objective_trace: trace,
            residual_scale: last.scale,
            constraint_residual: Some(eq_residual),
            final_mu: state.mu,
        },
    ))
}
