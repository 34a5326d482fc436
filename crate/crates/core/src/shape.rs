//! Shapes, landmarks, the weak-perspective camera and the metrics used to
//! compare reconstructions against ground truth.
//!
//! A shape is a `3 x p` matrix whose columns are landmark positions; an
//! observation is a `2 x p` matrix plus a per-landmark visibility flag. A
//! landmark is visible or invisible as a whole.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2xX, Matrix3, Matrix3xX, Rotation3, Vector2, Vector3};

use crate::error::{ensure_dim, Error, Result};

const ORTHO_TOL: f64 = 1e-8;

/// A set of `p` landmarks in 3D, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape3D {
    points: Matrix3xX<f64>,
}

impl Shape3D {
    pub fn new(points: Matrix3xX<f64>) -> Result<Self> {
        if points.ncols() == 0 {
            return Err(Error::InvalidArgument("shape needs at least one landmark".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("shape has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            points: Matrix3xX::zeros(p),
        }
    }

    pub fn points(&self) -> &Matrix3xX<f64> {
        &self.points
    }

    pub fn into_points(self) -> Matrix3xX<f64> {
        self.points
    }

    pub fn num_points(&self) -> usize {
        self.points.ncols()
    }

    /// Applies a rotation to every landmark.
    pub fn rotated(&self, rotation: &Rotation) -> Shape3D {
        Shape3D {
            points: rotation.matrix() * &self.points,
        }
    }

    /// Column-major `3p` vector `[x_1, y_1, z_1, x_2, ...]`.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.points.as_slice())
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() % 3 != 0 {
            return Err(Error::InvalidArgument("vector length is not a multiple of 3".into()));
        }
        Shape3D::new(Matrix3xX::from_column_slice(v.as_slice()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.points.norm()
    }
}

/// 2D landmark observations with whole-landmark visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks2D {
    points: Matrix2xX<f64>,
    visibility: Vec<bool>,
}

impl Landmarks2D {
    /// Builds an observation; coordinates of invisible landmarks may be
    /// anything (including NaN) and are never read by the solvers.
    pub fn new(points: Matrix2xX<f64>, visibility: Vec<bool>) -> Result<Self> {
        ensure_dim("visibility", points.ncols(), visibility.len())?;
        if points.ncols() == 0 {
            return Err(Error::InvalidArgument("landmarks need at least one column".into()));
        }
        for (j, col) in points.column_iter().enumerate() {
            if visibility[j] && col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "visible landmark {j} has non-finite coordinates"
                )));
            }
        }
        Ok(Self { points, visibility })
    }

    pub fn fully_visible(points: Matrix2xX<f64>) -> Result<Self> {
        let p = points.ncols();
        Self::new(points, vec![true; p])
    }

    pub fn points(&self) -> &Matrix2xX<f64> {
        &self.points
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visibility
    }

    pub fn num_points(&self) -> usize {
        self.points.ncols()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        self.visibility
            .iter()
            .enumerate()
            .filter_map(|(j, &v)| v.then_some(j))
            .collect()
    }

    pub fn num_visible(&self) -> usize {
        self.visibility.iter().filter(|&&v| v).count()
    }

    /// The `2 x n_visible` matrix of visible columns, in index order.
    pub fn visible_points(&self) -> Matrix2xX<f64> {
        select_columns_2(&self.points, &self.visible_indices())
    }

    pub(crate) fn with_points(&self, points: Matrix2xX<f64>) -> Self {
        Self {
            points,
            visibility: self.visibility.clone(),
        }
    }
}

pub(crate) fn select_columns_2(m: &Matrix2xX<f64>, idx: &[usize]) -> Matrix2xX<f64> {
    Matrix2xX::from_fn(idx.len(), |r, c| m[(r, idx[c])])
}

pub(crate) fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

/// Centering and variance normalization shared by shapes and observations.
pub trait PointSet: Sized {
    type Mean;

    /// Subtracts each row's mean (visible columns only for observations).
    fn centralize(&self) -> Result<(Self, Self::Mean)>;

    /// Divides by `sigma` where `sigma^2` is the mean squared entry over the
    /// considered columns, so the average per-direction variance becomes 1.
    /// The input is expected to be centralized already.
    fn normalize_unit_variance(&self) -> Result<(Self, f64)>;
}

impl PointSet for Shape3D {
    type Mean = Vector3<f64>;

    fn centralize(&self) -> Result<(Self, Vector3<f64>)> {
        let p = self.num_points() as f64;
        let mean = self.points.column_sum() / p;
        let mut points = self.points.clone();
        for mut col in points.column_iter_mut() {
            col -= mean;
        }
        Ok((Shape3D { points }, mean))
    }

    fn normalize_unit_variance(&self) -> Result<(Self, f64)> {
        let sigma = (self.points.norm_squared() / (3.0 * self.num_points() as f64)).sqrt();
        if sigma == 0.0 {
            return Err(Error::DegenerateShape);
        }
        Ok((
            Shape3D {
                points: &self.points / sigma,
            },
            sigma,
        ))
    }
}

impl PointSet for Landmarks2D {
    type Mean = Vector2<f64>;

    fn centralize(&self) -> Result<(Self, Vector2<f64>)> {
        let visible = self.visible_indices();
        if visible.is_empty() {
            return Err(Error::NoObservations);
        }
        let mut mean = Vector2::zeros();
        for &j in &visible {
            mean += self.points.column(j);
        }
        mean /= visible.len() as f64;
        let mut points = self.points.clone();
        for mut col in points.column_iter_mut() {
            col -= mean;
        }
        Ok((self.with_points(points), mean))
    }

    fn normalize_unit_variance(&self) -> Result<(Self, f64)> {
        let visible = self.visible_indices();
        if visible.is_empty() {
            return Err(Error::NoObservations);
        }
        let sum_sq: f64 = visible
            .iter()
            .map(|&j| self.points.column(j).norm_squared())
            .sum();
        let sigma = (sum_sq / (2.0 * visible.len() as f64)).sqrt();
        if sigma == 0.0 {
            return Err(Error::DegenerateShape);
        }
        Ok((self.with_points(&self.points / sigma), sigma))
    }
}

/// Weak-perspective camera: orthographic projection then uniform scale `s`.
/// Only used to synthesize data; solvers absorb `s` into the coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraWeakPerspective {
    s: f64,
}

impl CameraWeakPerspective {
    pub fn new(s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("camera scale must be > 0, got {s}")));
        }
        Ok(Self { s })
    }

    pub fn orthographic() -> Self {
        Self { s: 1.0 }
    }

    pub fn scale(&self) -> f64 {
        self.s
    }
}

/// A 3D rotation (element of SO(3)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    /// Validates orthonormality and `det = +1` to within `1e-8`.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "not a rotation: |RtR - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn about_x(angle: f64) -> Self {
        Self(*Rotation3::from_axis_angle(&Vector3::x_axis(), angle).matrix())
    }

    pub fn about_y(angle: f64) -> Self {
        Self(*Rotation3::from_axis_angle(&Vector3::y_axis(), angle).matrix())
    }

    pub fn about_z(angle: f64) -> Self {
        Self(*Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix())
    }

    /// `Rz(a) * Ry(b) * Rz(c)`.
    pub fn from_euler_zyz(a: f64, b: f64, c: f64) -> Self {
        Self(Self::about_z(a).0 * Self::about_y(b).0 * Self::about_z(c).0)
    }

    /// Completes two orthonormal rows with their cross product. The rows are
    /// first projected onto the Stiefel manifold, so any full-rank `2 x 3`
    /// input yields a proper rotation.
    pub fn from_top_rows(rows: &Matrix2x3<f64>) -> Self {
        let r = crate::prox::stiefel_projection(rows);
        let r1 = r.row(0).transpose();
        let r2 = r.row(1).transpose();
        let r3 = r1.cross(&r2);
        Self(Matrix3::from_rows(&[
            r1.transpose(),
            r2.transpose(),
            r3.transpose(),
        ]))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// The first two rows, `R̄`, satisfying `R̄ R̄ᵀ = I₂`.
    pub fn top_rows(&self) -> Matrix2x3<f64> {
        self.0.fixed_rows::<2>(0).into_owned()
    }
}

/// Basis weights, one per dictionary atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients(pub DVector<f64>);

impl Coefficients {
    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(DVector::from_vec(v))
    }

    pub fn zeros(k: usize) -> Self {
        Self(DVector::zeros(k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&c| c >= 0.0)
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|c| c.abs()).sum()
    }
}

/// Ordered basis shapes `B_1..B_k` plus their stacked `3k x p` form.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDictionary {
    bases: Vec<Shape3D>,
    stacked: DMatrix<f64>,
}

impl ShapeDictionary {
    /// Builds a dictionary, centralizing each basis independently.
    pub fn new(bases: Vec<Shape3D>) -> Result<Self> {
        let centered = bases
            .iter()
            .map(|b| b.centralize().map(|(c, _)| c))
            .collect::<Result<Vec<_>>>()?;
        Self::from_raw(centered)
    }

    /// Builds a dictionary from bases used exactly as given (no centering).
    /// Used by the random-basis recovery protocol, where bases are raw
    /// Gaussian matrices.
    pub fn from_raw(bases: Vec<Shape3D>) -> Result<Self> {
        let Some(first) = bases.first() else {
            return Err(Error::InvalidArgument("dictionary needs at least one basis".into()));
        };
        let p = first.num_points();
        for b in &bases {
            ensure_dim("basis landmark count", p, b.num_points())?;
        }
        let k = bases.len();
        let stacked = DMatrix::from_fn(3 * k, p, |r, c| bases[r / 3].points[(r % 3, c)]);
        Ok(Self { bases, stacked })
    }

    pub fn k(&self) -> usize {
        self.bases.len()
    }

    pub fn p(&self) -> usize {
        self.stacked.ncols()
    }

    pub fn bases(&self) -> &[Shape3D] {
        &self.bases
    }

    pub fn basis(&self, i: usize) -> &Shape3D {
        &self.bases[i]
    }

    /// `B̃`, the bases stacked vertically (`3k x p`).
    pub fn stacked(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    /// `B̃` restricted to the given landmark columns.
    pub fn stacked_columns(&self, idx: &[usize]) -> DMatrix<f64> {
        select_columns(&self.stacked, idx)
    }

    /// Each basis rescaled to unit average variance; returns the scales used.
    pub fn normalized(&self) -> Result<(Self, Vec<f64>)> {
        let mut scales = Vec::with_capacity(self.k());
        let mut bases = Vec::with_capacity(self.k());
        for b in &self.bases {
            let (nb, s) = b.normalize_unit_variance()?;
            scales.push(s);
            bases.push(nb);
        }
        Ok((Self::from_raw(bases)?, scales))
    }

    /// Whether every basis has Frobenius norm at most `1 + tol`.
    pub fn within_unit_norm(&self, tol: f64) -> bool {
        self.bases.iter().all(|b| b.frobenius_norm() <= 1.0 + tol)
    }

    /// Bases as columns of a `3p x k` matrix (vectorized, column-major).
    pub fn vectorized(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(3 * p, self.k(), |r, i| self.bases[i].points.as_slice()[r])
    }

    pub fn from_vectorized(d: &DMatrix<f64>) -> Result<Self> {
        let bases = d
            .column_iter()
            .map(|c| Shape3D::from_vector(&c.into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_raw(bases)
    }
}

/// `S = Σ c_i B_i`.
pub fn compose_shape(dict: &ShapeDictionary, c: &Coefficients) -> Result<Shape3D> {
    ensure_dim("coefficients", dict.k(), c.len())?;
    let mut points = Matrix3xX::zeros(dict.p());
    for (b, &ci) in dict.bases.iter().zip(c.0.iter()) {
        points += &b.points * ci;
    }
    Ok(Shape3D { points })
}

/// `S = Σ c_i R_i B_i`, one rotation per basis.
pub fn compose_relaxed(
    dict: &ShapeDictionary,
    c: &Coefficients,
    rotations: &[Rotation],
) -> Result<Shape3D> {
    ensure_dim("coefficients", dict.k(), c.len())?;
    ensure_dim("rotations", dict.k(), rotations.len())?;
    let mut points = Matrix3xX::zeros(dict.p());
    for ((b, &ci), r) in dict.bases.iter().zip(c.0.iter()).zip(rotations) {
        if ci != 0.0 {
            points += (r.0 * &b.points) * ci;
        }
    }
    Ok(Shape3D { points })
}

/// `W = s R̄ S + t 1ᵀ`, all landmarks visible.
pub fn project_weak_perspective(
    shape: &Shape3D,
    camera: &CameraWeakPerspective,
    rotation: &Rotation,
    translation: &Vector2<f64>,
) -> Landmarks2D {
    let mut w = (rotation.top_rows() * &shape.points) * camera.s;
    for mut col in w.column_iter_mut() {
        col += translation;
    }
    let p = w.ncols();
    Landmarks2D {
        points: w,
        visibility: vec![true; p],
    }
}

/// Similarity transform mapping one shape onto another.
#[derive(Debug, Clone)]
pub struct Similarity {
    pub rotation: Rotation,
    pub scale: f64,
    pub translation: Vector3<f64>,
    /// `s R a + t 1ᵀ`.
    pub aligned: Shape3D,
    /// `‖s R a + t 1ᵀ − b‖_F`.
    pub residual: f64,
}

/// Least-squares similarity alignment of `a` onto `b` (Kabsch with a
/// determinant correction, plus the optimal uniform scale).
pub fn procrustes_align(a: &Shape3D, b: &Shape3D) -> Result<Similarity> {
    ensure_dim("landmark count", a.num_points(), b.num_points())?;
    let (ac, mean_a) = a.centralize()?;
    let (bc, mean_b) = b.centralize()?;
    let a_norm2 = ac.points.norm_squared();
    if a_norm2 <= f64::MIN_POSITIVE {
        return Err(Error::DegenerateShape);
    }
    let h = &bc.points * ac.points.transpose();
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * correction * v_t;
    let sv = &svd.singular_values;
    // SVD returns singular values in descending order, so the correction hits the smallest.
    let trace = sv[0] + sv[1] + d * sv[2];
    let scale = trace / a_norm2;
    let translation = mean_b - r * mean_a * scale;
    let mut aligned = (r * &a.points) * scale;
    for mut col in aligned.column_iter_mut() {
        col += translation;
    }
    let residual = (&aligned - &b.points).norm();
    Ok(Similarity {
        rotation: Rotation(r),
        scale,
        translation,
        aligned: Shape3D { points: aligned },
        residual,
    })
}

/// Mean per-landmark 3D distance after aligning `estimate` to `truth` with a
/// translation and a nonnegative uniform scale (no rotation).
pub fn error_3d(estimate: &Shape3D, truth: &Shape3D) -> Result<f64> {
    ensure_dim("landmark count", truth.num_points(), estimate.num_points())?;
    let (tc, _) = truth.centralize()?;
    if tc.points.norm_squared() <= f64::MIN_POSITIVE {
        return Err(Error::DegenerateShape);
    }
    let (ec, _) = estimate.centralize()?;
    let e2 = ec.points.norm_squared();
    let scale = if e2 > 0.0 {
        (ec.points.dot(&tc.points) / e2).max(0.0)
    } else {
        0.0
    };
    let diff = ec.points * scale - tc.points;
    let total: f64 = diff.column_iter().map(|c| c.norm()).sum();
    Ok(total / truth.num_points() as f64)
}

/// Mean 2D distance over landmarks visible in both inputs.
pub fn error_2d(model: &Landmarks2D, annotation: &Landmarks2D) -> Result<f64> {
    ensure_dim("landmark count", annotation.num_points(), model.num_points())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for j in 0..model.num_points() {
        if model.visibility[j] && annotation.visibility[j] {
            total += (model.points.column(j) - annotation.points.column(j)).norm();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoObservations);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2xX, Matrix3xX};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_shape(rng: &mut ChaCha8Rng, p: usize) -> Shape3D {
        Shape3D::new(Matrix3xX::from_fn(p, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
        let tau = std::f64::consts::TAU;
        Rotation::from_euler_zyz(
            rng.random_range(0.0..tau),
            rng.random_range(0.0..tau),
            rng.random_range(0.0..tau),
        )
    }

    #[test]
    fn centralize_matrix() {
        let w = Landmarks2D::fully_visible(Matrix2xX::from_row_slice(&[1., 2., 3., 4., 5., 6.])).unwrap();
        let (c, mean) = w.centralize().unwrap();
        assert_eq!(mean, Vector2::new(2.0, 5.0));
        assert_eq!(c.points(), &Matrix2xX::from_row_slice(&[-1., 0., 1., -1., 0., 1.]));
        let (again, mean2) = c.centralize().unwrap();
        assert_eq!(mean2, Vector2::zeros());
        assert_eq!(again, c);
    }

    #[test]
    fn centralize_respects_visibility() {
        let w = Landmarks2D::new(
            Matrix2xX::from_row_slice(&[1., 3., 100., 0., 0., 100.]),
            vec![true, true, false],
        )
        .unwrap();
        let (c, mean) = w.centralize().unwrap();
        assert_eq!(mean, Vector2::new(2.0, 0.0));
        assert_eq!(c.visible_points(), Matrix2xX::from_row_slice(&[-1., 1., 0., 0.]));
    }

    #[test]
    fn centralize_without_observations_fails() {
        let w = Landmarks2D::new(Matrix2xX::zeros(3), vec![false; 3]).unwrap();
        assert!(matches!(w.centralize(), Err(Error::NoObservations)));
    }

    #[test]
    fn normalize_examples() {
        let w = Landmarks2D::fully_visible(Matrix2xX::from_row_slice(&[1., -1., 1., -1.])).unwrap();
        let (n, s) = w.normalize_unit_variance().unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(n, w);

        let w5 = w.with_points(w.points() * 5.0);
        let (n5, s5) = w5.normalize_unit_variance().unwrap();
        assert!((s5 - 5.0).abs() < 1e-12);
        assert!((n5.points() - n.points()).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (shape, _) = random_shape(&mut rng, 15).centralize().unwrap();
        let (ns, sigma) = shape.normalize_unit_variance().unwrap();
        let mean_sq = ns.points().iter().map(|v| v * v).sum::<f64>() / 45.0;
        assert!((mean_sq - 1.0).abs() < 1e-9);
        assert!((ns.points() * sigma - shape.points()).norm() < 1e-12);

        assert!(matches!(
            Shape3D::zeros(4).normalize_unit_variance(),
            Err(Error::DegenerateShape)
        ));
    }

    fn two_basis_dict() -> ShapeDictionary {
        let b1 = Shape3D::new(Matrix3xX::from_row_slice(&[1., -1., 0., 0., 2., -2., 3., 0., -3.])).unwrap();
        let b2 = Shape3D::new(Matrix3xX::from_row_slice(&[0., 1., -1., 1., -1., 0., 2., -1., -1.])).unwrap();
        ShapeDictionary::new(vec![b1, b2]).unwrap()
    }

    #[test]
    fn compose_examples() {
        let d = two_basis_dict();
        let s = compose_shape(&d, &Coefficients::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(&s, d.basis(0));
        let s = compose_shape(&d, &Coefficients::zeros(2)).unwrap();
        assert_eq!(s.points().norm(), 0.0);
        let same = ShapeDictionary::new(vec![d.basis(0).clone(), d.basis(0).clone()]).unwrap();
        let s = compose_shape(&same, &Coefficients::from_vec(vec![0.5, 0.5])).unwrap();
        assert!((s.points() - d.basis(0).points()).norm() < 1e-15);
        assert!(matches!(
            compose_shape(&d, &Coefficients::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn compose_relaxed_examples() {
        let d = two_basis_dict();
        let c = Coefficients::from_vec(vec![0.3, 1.7]);
        let ids = [Rotation::identity(); 2];
        let a = compose_relaxed(&d, &c, &ids).unwrap();
        let b = compose_shape(&d, &c).unwrap();
        assert!((a.points() - b.points()).norm() < 1e-14);

        // 90° about z maps (x, y, z) to (-y, x, z).
        let single = ShapeDictionary::new(vec![d.basis(0).clone()]).unwrap();
        let r = Rotation::about_z(std::f64::consts::FRAC_PI_2);
        let s = compose_relaxed(&single, &Coefficients::from_vec(vec![1.0]), &[r]).unwrap();
        let b1 = d.basis(0).points();
        for j in 0..3 {
            assert!((s.points()[(0, j)] + b1[(1, j)]).abs() < 1e-14);
            assert!((s.points()[(1, j)] - b1[(0, j)]).abs() < 1e-14);
            assert!((s.points()[(2, j)] - b1[(2, j)]).abs() < 1e-14);
        }

        // Independent re-evaluation with explicit loops.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bases: Vec<_> = (0..4).map(|_| random_shape(&mut rng, 6)).collect();
        let dict = ShapeDictionary::from_raw(bases.clone()).unwrap();
        let c = Coefficients::from_vec((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
        let rots: Vec<_> = (0..4).map(|_| random_rotation(&mut rng)).collect();
        let s = compose_relaxed(&dict, &c, &rots).unwrap();
        for r in 0..3 {
            for j in 0..6 {
                let mut acc = 0.0;
                for i in 0..4 {
                    for m in 0..3 {
                        acc += c.0[i] * rots[i].matrix()[(r, m)] * bases[i].points()[(m, j)];
                    }
                }
                assert!((acc - s.points()[(r, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shared_rotation_distributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dict = ShapeDictionary::new((0..3).map(|_| random_shape(&mut rng, 7)).collect()).unwrap();
        let c = Coefficients::from_vec(vec![0.2, -0.4, 1.1]);
        let r = random_rotation(&mut rng);
        let a = compose_relaxed(&dict, &c, &[r; 3]).unwrap();
        let b = compose_shape(&dict, &c).unwrap().rotated(&r);
        assert!((a.points() - b.points()).norm() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_shape(&mut rng, 5);
        let w = project_weak_perspective(&s, &CameraWeakPerspective::orthographic(), &Rotation::identity(), &Vector2::zeros());
        assert_eq!(w.points(), &s.points().fixed_rows::<2>(0).into_owned());
        let cam = CameraWeakPerspective::new(2.0).unwrap();
        let w2 = project_weak_perspective(&s, &cam, &Rotation::identity(), &Vector2::new(1.0, 1.0));
        let expected = s.points().fixed_rows::<2>(0).map(|v| 2.0 * v + 1.0);
        assert!((w2.points() - expected).norm() < 1e-14);
        assert!(CameraWeakPerspective::new(0.0).is_err());
    }

    #[test]
    fn rotation_top_rows_have_unit_spectral_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            assert!(Rotation::new(*r.matrix()).is_ok());
            let rb = r.top_rows();
            assert!((rb * rb.transpose() - nalgebra::Matrix2::identity()).abs().max() < 1e-12);
            let s = rb.svd(false, false).singular_values;
            assert!((s.max() - 1.0).abs() < 1e-8);
        }
        assert!(Rotation::new(Matrix3::identity() * 2.0).is_err());
        assert!(Rotation::new(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))).is_err());
    }

    #[test]
    fn procrustes_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_shape(&mut rng, 10);
        let same = procrustes_align(&a, &a).unwrap();
        assert!(same.residual < 1e-12);
        assert!((same.rotation.matrix() - Matrix3::identity()).norm() < 1e-10);
        assert!((same.scale - 1.0).abs() < 1e-12);

        let r0 = random_rotation(&mut rng);
        let t0 = Vector3::new(0.5, -2.0, 3.0);
        let mut b = (r0.matrix() * a.points()) * 2.0;
        for mut col in b.column_iter_mut() {
            col += t0;
        }
        let b = Shape3D::new(b).unwrap();
        let sim = procrustes_align(&a, &b).unwrap();
        assert!(sim.residual < 1e-10);
        assert!((sim.rotation.matrix() - r0.matrix()).norm() < 1e-10);
        assert!((sim.scale - 2.0).abs() < 1e-10);
        assert!((sim.translation - t0).norm() < 1e-10);
        assert!(matches!(procrustes_align(&Shape3D::zeros(10), &a), Err(Error::DegenerateShape)));
    }

    #[test]
    fn procrustes_beats_random_similarities() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_shape(&mut rng, 12);
        let r0 = random_rotation(&mut rng);
        let noisy = (r0.matrix() * a.points()) * 1.5 + Matrix3xX::from_fn(12, |_, _| rng.random_range(-0.1..0.1));
        let b = Shape3D::new(noisy).unwrap();
        let best = procrustes_align(&a, &b).unwrap();
        assert!(Rotation::new(*best.rotation.matrix()).is_ok());
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            let s = rng.random_range(0.1..3.0);
            let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut m = (r.matrix() * a.points()) * s;
            for mut col in m.column_iter_mut() {
                col += t;
            }
            assert!(best.residual <= (m - b.points()).norm() + 1e-12);
        }
    }

    #[test]
    fn error_3d_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = random_shape(&mut rng, 8);
        assert!(error_3d(&truth, &truth).unwrap() < 1e-14);
        let mut moved = truth.points() * 3.0;
        for mut col in moved.column_iter_mut() {
            col += Vector3::new(1.0, 2.0, -3.0);
        }
        assert!(error_3d(&Shape3D::new(moved).unwrap(), &truth).unwrap() < 1e-12);
        let rotated = truth.rotated(&Rotation::about_x(0.7));
        assert!(error_3d(&rotated, &truth).unwrap() > 1e-3);
        assert!(matches!(error_3d(&truth, &Shape3D::zeros(8)), Err(Error::DegenerateShape)));
    }

    #[test]
    fn error_2d_examples() {
        let a = Landmarks2D::fully_visible(Matrix2xX::from_fn(5, |r, c| (r * 5 + c) as f64)).unwrap();
        assert_eq!(error_2d(&a, &a).unwrap(), 0.0);
        let mut pts = a.points().clone();
        pts[(0, 2)] += 3.0;
        pts[(1, 2)] += 4.0;
        let b = a.with_points(pts);
        assert!((error_2d(&b, &a).unwrap() - 1.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Matrix2xX::from_fn(6, |_, _| rng.random_range(-5.0..5.0));
        let y = Matrix2xX::from_fn(6, |_, _| rng.random_range(-5.0..5.0));
        let vis_a = vec![true, true, false, true, true, true];
        let vis_b = vec![true, false, true, true, true, true];
        let la = Landmarks2D::new(x.clone(), vis_a).unwrap();
        let lb = Landmarks2D::new(y.clone(), vis_b).unwrap();
        let manual: f64 = [0usize, 3, 4, 5]
            .iter()
            .map(|&j| ((x[(0, j)] - y[(0, j)]).powi(2) + (x[(1, j)] - y[(1, j)]).powi(2)).sqrt())
            .sum::<f64>()
            / 4.0;
        assert!((error_2d(&la, &lb).unwrap() - manual).abs() < 1e-12);

        let none = Landmarks2D::new(x, vec![false; 6]).unwrap();
        assert!(matches!(error_2d(&none, &lb), Err(Error::NoObservations)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn shape_strategy() -> impl Strategy<Value = Shape3D> {
            (2usize..12).prop_flat_map(|p| {
                proptest::collection::vec(-10.0f64..10.0, 3 * p)
                    .prop_map(|v| Shape3D::new(Matrix3xX::from_column_slice(&v)).unwrap())
            })
        }

        proptest! {
            #[test]
            fn centralize_is_idempotent(s in shape_strategy()) {
                let (c1, _) = s.centralize().unwrap();
                let (c2, m2) = c1.centralize().unwrap();
                prop_assert!(m2.norm() < 1e-12);
                prop_assert!((c1.points() - c2.points()).norm() < 1e-12);
            }

            #[test]
            fn error_3d_invariant_to_translation_and_scale(
                s in shape_strategy(),
                scale in 0.1f64..10.0,
                t in proptest::array::uniform3(-5.0f64..5.0),
            ) {
                prop_assume!(s.centralize().unwrap().0.points().norm() > 1e-3);
                let mut moved = s.points() * scale;
                for mut col in moved.column_iter_mut() {
                    col += Vector3::from(t);
                }
                let e = error_3d(&Shape3D::new(moved).unwrap(), &s).unwrap();
                prop_assert!(e < 1e-9);
            }
        }
    }
}
