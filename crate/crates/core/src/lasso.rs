//! ℓ1-regularized least squares in Gram form, solved by accelerated
//! projected (proximal) gradient with backtracking and restart.
//!
//! Minimizes, jointly over the columns of `C`,
//!
//! ```text
//! ½‖X − D C‖²_F + λ Σ |C_ij|          (signed)
//! ½‖X − D C‖²_F + λ Σ C_ij,  C ≥ 0    (nonnegative)
//! ```
//!
//! given only `G = DᵀD`, `H = DᵀX` and `½‖X‖²_F`.

use nalgebra::DMatrix;

use crate::prox::soft_threshold_scalar;

/// Sign constraint on sparse codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodingMode {
    /// `C ≥ 0`; the ℓ1 term becomes linear. Gradient step, then clamp.
    #[default]
    Nonnegative,
    /// Unconstrained sign; gradient step, then soft-threshold.
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop once the relative cost decrease stays below this for a few
    /// consecutive iterations.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub c: DMatrix<f64>,
    /// Full cost including `½‖X‖²`.
    pub cost: f64,
    pub iterations: usize,
}

/// Gram-form lasso problem.
pub struct GramLasso<'a> {
    pub gram: &'a DMatrix<f64>,
    pub h: &'a DMatrix<f64>,
    /// `½‖X‖²_F`, so reported costs are the true objective.
    pub offset: f64,
    pub lambda: f64,
    pub mode: CodingMode,
}

impl GramLasso<'_> {
    fn smooth(&self, c: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let gc = self.gram * c;
        let value = 0.5 * c.dot(&gc) - c.dot(self.h) + self.offset;
        (value, gc - self.h)
    }

    fn smooth_value(&self, c: &DMatrix<f64>) -> f64 {
        0.5 * c.dot(&(self.gram * c)) - c.dot(self.h) + self.offset
    }

    fn penalty(&self, c: &DMatrix<f64>) -> f64 {
        match self.mode {
            CodingMode::Nonnegative => self.lambda * c.sum(),
            CodingMode::Signed => self.lambda * c.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// Full objective.
    pub fn cost(&self, c: &DMatrix<f64>) -> f64 {
        self.smooth_value(c) + self.penalty(c)
    }

    /// Gradient of the smooth part, `G C − H`.
    pub fn smooth_gradient(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        self.gram * c - self.h
    }

    fn prox(&self, v: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
        let t = self.lambda * step;
        match self.mode {
            CodingMode::Nonnegative => v.map(|x| (x - t).max(0.0)),
            CodingMode::Signed => v.map(|x| soft_threshold_scalar(x, t)),
        }
    }

    fn feasible(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        match self.mode {
            CodingMode::Nonnegative => c.map(|x| x.max(0.0)),
            CodingMode::Signed => c.clone(),
        }
    }

    /// Runs from `init` and returns the best iterate; its cost never exceeds
    /// the cost of (the feasible part of) `init`.
    pub fn solve(&self, init: &DMatrix<f64>, opts: &LassoOptions) -> LassoSolution {
        let mut x = self.feasible(init);
        let mut fx = self.cost(&x);
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut lipschitz = initial_lipschitz(self.gram);
        let mut streak = 0;
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            iterations = it;
            let (fy, grad) = self.smooth(&y);
            let mut x_new;
            loop {
                x_new = self.prox(&(&y - &grad / lipschitz), 1.0 / lipschitz);
                let d = &x_new - &y;
                let model = fy + grad.dot(&d) + 0.5 * lipschitz * d.norm_squared();
                let actual = self.smooth_value(&x_new);
                if actual <= model + 1e-12 * fy.abs().max(1.0) || lipschitz > 1e300 {
                    break;
                }
                lipschitz *= 2.0;
            }
            let f_new = self.cost(&x_new);
            if f_new > fx {
                // Momentum overshoot: restart from the current point.
                if y == x {
                    break;
                }
                y = x.clone();
                t = 1.0;
                continue;
            }
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
            let decrease = (fx - f_new) / fx.abs().max(1e-300);
            x = x_new;
            fx = f_new;
            t = t_new;
            if decrease < opts.tol {
                streak += 1;
                if streak >= 3 {
                    break;
                }
            } else {
                streak = 0;
            }
        }
        LassoSolution {
            c: x,
            cost: fx,
            iterations,
        }
    }
}

/// Power-iteration estimate of `λ_max(G)`; backtracking corrects
/// underestimates.
fn initial_lipschitz(gram: &DMatrix<f64>) -> f64 {
    let n = gram.nrows();
    if n == 0 {
        return 1.0;
    }
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..30 {
        let w = gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 1.0;
        }
        est = norm;
        v = w / norm;
    }
    est.max(1e-12)
}
