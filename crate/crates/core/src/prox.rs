//! Closed-form proximal and projection operators used by the ADMM solvers.
//!
//! The spectral-norm proximal operator acts on singular values only: it
//! subtracts `λ` times the projection of `σ/λ` onto the unit ℓ1 ball. Small
//! blocks are zeroed, large ones get their singular values pulled towards
//! each other, which is what makes the solution blocks near-orthogonal.

use nalgebra::{
    allocator::Allocator, DefaultAllocator, Dim, Matrix, Matrix2, Matrix2x3, OMatrix, RowVector3,
    Storage, Vector2,
};

/// Singular value decomposition of a `2 x 3` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriple {
    pub u: Matrix2<f64>,
    /// Descending, nonnegative.
    pub sigma: Vector2<f64>,
    /// Rows are orthonormal.
    pub v_t: Matrix2x3<f64>,
}

impl SvdTriple {
    pub fn reconstruct(&self) -> Matrix2x3<f64> {
        self.u * Matrix2::from_diagonal(&self.sigma) * self.v_t
    }

    pub fn spectral_norm(&self) -> f64 {
        self.sigma[0]
    }
}

/// Euclidean projection onto `{x : ‖x‖₁ ≤ radius}` by sort-and-threshold.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    debug_assert!(radius > 0.0);
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if m > candidate {
            tau = candidate;
        } else {
            break;
        }
    }
    v.iter()
        .map(|&x| x.signum() * (x.abs() - tau).max(0.0))
        .collect()
}

/// SVD of a `2 x 3` matrix through the eigenvectors of the `2 x 2` Gram
/// matrix `A Aᵀ`. Falls back to a general SVD when the two singular values
/// are within `1e-12` (relative) of each other.
pub fn svd_2x3(a: &Matrix2x3<f64>) -> SvdTriple {
    let g00 = a.row(0).norm_squared();
    let g11 = a.row(1).norm_squared();
    let g01 = a.row(0).dot(&a.row(1));
    if g00 == 0.0 && g11 == 0.0 {
        return SvdTriple {
            u: Matrix2::identity(),
            sigma: Vector2::zeros(),
            v_t: Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
        };
    }
    let theta = 0.5 * (2.0 * g01).atan2(g00 - g11);
    let (s, c) = theta.sin_cos();
    let u = Matrix2::new(c, -s, s, c);
    let b = u.transpose() * a;
    let b1 = b.row(0).into_owned();
    let sigma1 = b1.norm();
    let v1 = b1 / sigma1;
    let b2 = b.row(1).into_owned();
    let b2_perp = b2 - v1 * b2.dot(&v1);
    let sigma2 = b2_perp.norm();
    if sigma1 - sigma2 < 1e-12 * sigma1.max(1.0) {
        return svd_general(a);
    }
    let v2 = if sigma2 > 0.0 {
        b2_perp / sigma2
    } else {
        orthonormal_complement(&v1)
    };
    SvdTriple {
        u,
        sigma: Vector2::new(sigma1, sigma2),
        v_t: Matrix2x3::from_rows(&[v1, v2]),
    }
}

fn svd_general(a: &Matrix2x3<f64>) -> SvdTriple {
    let svd = a.svd(true, true);
    let mut u = svd.u.expect("svd u");
    let mut v_t = svd.v_t.expect("svd v_t");
    let mut sigma = svd.singular_values;
    if sigma[1] > sigma[0] {
        sigma.swap_rows(0, 1);
        u.swap_columns(0, 1);
        v_t.swap_rows(0, 1);
    }
    SvdTriple { u, sigma, v_t }
}

/// A unit vector orthogonal to the unit vector `v`.
fn orthonormal_complement(v: &RowVector3<f64>) -> RowVector3<f64> {
    let k = (0..3)
        .min_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()))
        .unwrap_or(0);
    let mut e = RowVector3::zeros();
    e[k] = 1.0;
    let w = e - v * v.dot(&e);
    w / w.norm()
}

/// `D_λ(A) = U diag(σ − λ P_ℓ1(σ/λ)) Vᵀ`, the minimizer of
/// `½‖A − X‖²_F + λ‖X‖₂`.
pub fn prox_spectral(a: &Matrix2x3<f64>, lambda: f64) -> Matrix2x3<f64> {
    debug_assert!(lambda >= 0.0);
    if lambda <= 0.0 {
        return *a;
    }
    let svd = svd_2x3(a);
    let sigma = svd.sigma;
    // Nuclear norm inside the dual ball: the whole block is pruned.
    if sigma[0] + sigma[1] <= lambda {
        return Matrix2x3::zeros();
    }
    let proj = project_l1_ball(&[sigma[0] / lambda, sigma[1] / lambda], 1.0);
    let shrunk = Vector2::new(
        (sigma[0] - lambda * proj[0]).max(0.0),
        (sigma[1] - lambda * proj[1]).max(0.0),
    );
    svd.u * Matrix2::from_diagonal(&shrunk) * svd.v_t
}

/// Nearest matrix with orthonormal rows (polar factor `U Vᵀ`).
pub fn stiefel_projection(a: &Matrix2x3<f64>) -> Matrix2x3<f64> {
    let svd = svd_2x3(a);
    svd.u * svd.v_t
}

pub fn spectral_norm_2x3(a: &Matrix2x3<f64>) -> f64 {
    svd_2x3(a).sigma[0]
}

/// Scalar soft-thresholding `sign(x) (|x| − β)₊`.
#[inline]
pub fn soft_threshold_scalar(x: f64, beta: f64) -> f64 {
    x.signum() * (x.abs() - beta).max(0.0)
}

/// Elementwise soft-thresholding.
pub fn soft_threshold<R: Dim, C: Dim, S: Storage<f64, R, C>>(
    x: &Matrix<f64, R, C, S>,
    beta: f64,
) -> OMatrix<f64, R, C>
where
    DefaultAllocator: Allocator<R, C>,
{
    x.map(|v| soft_threshold_scalar(v, beta))
}
