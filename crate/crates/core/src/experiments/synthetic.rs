//! Camera orbits and observation corruption.

use std::f64::consts::TAU;

use nalgebra::{Matrix2xX, Vector2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::shape::{project_weak_perspective, CameraWeakPerspective, Landmarks2D, Rotation, Shape3D};

/// Orthographic views of a shape sequence from a camera circling the
/// vertical (`y`) axis once every `frames_per_rev` frames. Frame `t` shows
/// `shapes[t]` rotated by `2πt / frames_per_rev` about `y`.
pub fn simulate_camera_orbit(shapes: &[Shape3D], frames_per_rev: usize) -> Result<Vec<Landmarks2D>> {
    if frames_per_rev == 0 {
        return Err(Error::InvalidArgument("frames_per_rev must be >= 1".into()));
    }
    Ok(shapes
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let rot = orbit_rotation(t, frames_per_rev);
            project_weak_perspective(s, &CameraWeakPerspective::orthographic(), &rot, &Vector2::zeros())
        })
        .collect())
}

/// Camera rotation used for frame `t` of an orbit.
pub fn orbit_rotation(t: usize, frames_per_rev: usize) -> Rotation {
    Rotation::about_y(TAU * t as f64 / frames_per_rev as f64)
}

/// Adds i.i.d. `N(0, σ²)` noise to every visible coordinate.
pub fn add_gaussian_noise(w: &Landmarks2D, sigma: f64, seed: u64) -> Result<Landmarks2D> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = w.points().clone();
    for j in 0..w.num_points() {
        if w.visibility()[j] {
            pts[(0, j)] += normal.sample(&mut rng);
            pts[(1, j)] += normal.sample(&mut rng);
        }
    }
    Ok(w.with_points(pts))
}

/// Axis-aligned box in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

/// Bounding box of the visible landmarks, grown by 20% in each dimension
/// (10% on every side). A zero extent is widened to the larger one, or to
/// unit size if both vanish.
pub fn outlier_box(w: &Landmarks2D) -> Result<BoundingBox> {
    let vis = w.visible_points();
    if vis.ncols() == 0 {
        return Err(Error::NoObservations);
    }
    let lo = Vector2::new(vis.row(0).min(), vis.row(1).min());
    let hi = Vector2::new(vis.row(0).max(), vis.row(1).max());
    let mut extent = hi - lo;
    let fallback = if extent.max() > 0.0 { extent.max() } else { 1.0 };
    for e in extent.iter_mut() {
        if *e <= 0.0 {
            *e = fallback;
        }
    }
    let center = (lo + hi) / 2.0;
    let half = extent * 0.6;
    Ok(BoundingBox {
        min: center - half,
        max: center + half,
    })
}

/// Replaces `floor(fraction·p + 0.5)` visible landmarks (chosen uniformly)
/// by uniform positions in `range`. Returns the corrupted landmarks and the
/// outlier mask.
pub fn add_outliers(
    w: &Landmarks2D,
    fraction: f64,
    range: &BoundingBox,
    seed: u64,
) -> Result<(Landmarks2D, Vec<bool>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction must be in [0, 1], got {fraction}")));
    }
    let p = w.num_points();
    let visible = w.visible_indices();
    let count = ((fraction * p as f64 + 0.5).floor() as usize).min(visible.len());
    let mut mask = vec![false; p];
    if count == 0 {
        return Ok((w.clone(), mask));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Matrix2xX<f64> = w.points().clone();
    let mut chosen: Vec<usize> = index::sample(&mut rng, visible.len(), count)
        .into_iter()
        .map(|i| visible[i])
        .collect();
    chosen.sort_unstable();
    for j in chosen {
        for r in 0..2 {
            pts[(r, j)] = if range.max[r] > range.min[r] {
                rng.random_range(range.min[r]..range.max[r])
            } else {
                range.min[r]
            };
        }
        mask[j] = true;
    }
    Ok((w.with_points(pts), mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3xX;
    use rand_distr::StandardNormal;

    fn random_shape(seed: u64, p: usize) -> Shape3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Shape3D::new(Matrix3xX::from_fn(p, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    #[test]
    fn orbit_examples() {
        let shapes: Vec<Shape3D> = (0..8).map(|i| random_shape(i, 6)).collect();
        let frames = simulate_camera_orbit(&shapes, 8).unwrap();
        assert_eq!(frames[0].points(), &shapes[0].points().fixed_rows::<2>(0).into_owned());

        let same = vec![shapes[0].clone(); 3];
        let frames = simulate_camera_orbit(&same, 2).unwrap();
        let front = frames[0].points();
        let back = frames[1].points();
        assert!((back.row(0) + front.row(0)).norm() < 1e-12);
        assert!((back.row(1) - front.row(1)).norm() < 1e-12);

        let frames = simulate_camera_orbit(&shapes, 5).unwrap();
        for (t, f) in frames.iter().enumerate() {
            let angle = TAU * t as f64 / 5.0;
            let expected = Rotation::about_y(angle).top_rows() * shapes[t].points();
            assert!((f.points() - expected).norm() < 1e-12);
        }
        assert!(simulate_camera_orbit(&shapes, 0).is_err());
    }

    #[test]
    fn noise_examples() {
        let w = Landmarks2D::fully_visible(Matrix2xX::from_fn(5, |r, c| (r + c) as f64)).unwrap();
        assert_eq!(add_gaussian_noise(&w, 0.0, 3).unwrap(), w);
        let a = add_gaussian_noise(&w, 0.1, 3).unwrap();
        assert_eq!(a, add_gaussian_noise(&w, 0.1, 3).unwrap());
        assert_ne!(a, w);
        assert!(add_gaussian_noise(&w, -1.0, 3).is_err());
    }

    #[test]
    fn outlier_examples() {
        let w = Landmarks2D::fully_visible(Matrix2xX::from_fn(15, |r, c| (r * 3 + c) as f64)).unwrap();
        let bbox = outlier_box(&w).unwrap();
        let (same, mask) = add_outliers(&w, 0.0, &bbox, 1).unwrap();
        assert_eq!(same, w);
        assert!(mask.iter().all(|m| !m));

        let (out, mask) = add_outliers(&w, 0.2, &bbox, 1).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 3);
        for j in 0..15 {
            if mask[j] {
                for r in 0..2 {
                    assert!(out.points()[(r, j)] >= bbox.min[r] && out.points()[(r, j)] <= bbox.max[r]);
                }
            } else {
                assert_eq!(out.points().column(j), w.points().column(j));
            }
        }
        assert_eq!(add_outliers(&w, 0.2, &bbox, 1).unwrap().0, out);
        assert!(add_outliers(&w, 1.5, &bbox, 1).is_err());
    }

    #[test]
    fn outlier_box_grows_by_twenty_percent() {
        let w = Landmarks2D::fully_visible(Matrix2xX::from_row_slice(&[0.0, 10.0, 0.0, 0.0, 5.0, 0.0])).unwrap();
        let b = outlier_box(&w).unwrap();
        assert!((b.min - Vector2::new(-1.0, -0.5)).norm() < 1e-12);
        assert!((b.max - Vector2::new(11.0, 5.5)).norm() < 1e-12);
    }
}
