//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix2x3};

/// Minimizer of `½‖A − X‖²_F + λ‖X‖₂` computed without the ℓ1-ball route.
///
/// Epigraph form: for a fixed bound `‖X‖₂ ≤ t` the best `X` clips the
/// singular values of `A` at `t`, leaving `g(t) = ½ Σ (σ_i − t)₊² + λt`,
/// which is convex in `t`. Golden-section search over `t ∈ [0, σ₁]` then
/// gives the optimal bound; the SVD is nalgebra's general one.
pub fn prox_spectral_epigraph(a: &Matrix2x3<f64>, lambda: f64) -> Matrix2x3<f64> {
    let svd = DMatrix::from_fn(2, 3, |r, c| a[(r, c)]).svd(true, true);
    let u = svd.u.expect("u");
    let v_t = svd.v_t.expect("v_t");
    let sigma = svd.singular_values;
    let s_max = sigma.max();
    let g = |t: f64| {
        let fit: f64 = sigma.iter().map(|&s| (s - t).max(0.0).powi(2)).sum();
        0.5 * fit + lambda * t
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, s_max);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-15 * s_max.max(1.0) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = g(x2);
        }
    }
    let t = 0.5 * (lo + hi);
    let mut x = Matrix2x3::zeros();
    for i in 0..sigma.len() {
        let s = sigma[i].min(t);
        for r in 0..2 {
            for c in 0..3 {
                x[(r, c)] += s * u[(r, i)] * v_t[(i, c)];
            }
        }
    }
    x
}

/// `½‖A − X‖²_F + λ‖X‖₂`, with the spectral norm from a general SVD.
pub fn prox_objective(a: &Matrix2x3<f64>, x: &Matrix2x3<f64>, lambda: f64) -> f64 {
    let spec = DMatrix::from_fn(2, 3, |r, c| x[(r, c)]).singular_values().max();
    0.5 * (a - x).norm_squared() + lambda * spec
}

/// Mean of `values` in index order.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
