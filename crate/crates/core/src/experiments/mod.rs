//! Synthetic data generators and experiment drivers.
//!
//! Every generator is a pure function of its seed. Drivers that fan out over
//! trials derive one seed per trial from the experiment seed and the trial
//! coordinates, so results do not depend on scheduling or thread count.
//! The `SHAPELIFT_THREADS` environment variable caps the worker count.

mod pose;
mod recovery;
pub mod skeleton;
mod synthetic;

pub use pose::{
    compare_pipelines, comparison_csv, evaluate_pipelines, make_pose_benchmark, pose_instance_from_shape,
    ComparisonRow, Difficulty, InstanceOutcome, PoseBenchmark, PoseBenchmarkConfig, PoseInstance,
};
pub use recovery::{
    make_recovery_instance, make_recovery_instance_with, phase_grid, phase_grid_with, relative_error, PhaseGridConfig,
    PhaseGridResult, RecoveryInstance,
};
pub use synthetic::{
    add_gaussian_noise, add_outliers, orbit_rotation, outlier_box, simulate_camera_orbit, BoundingBox,
};

use std::f64::consts::TAU;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::shape::Rotation;

/// How random rotations are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationSampling {
    /// Three ZYZ Euler angles, each uniform on `[0, 2π]`. Not uniform on
    /// SO(3), but the conventional protocol for the recovery experiment.
    #[default]
    EulerZyz,
    /// Haar-uniform, from a normalized Gaussian quaternion.
    Haar,
}

pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R, sampling: RotationSampling) -> Rotation {
    match sampling {
        RotationSampling::EulerZyz => random_rotation_zyz(rng),
        RotationSampling::Haar => random_rotation_haar(rng),
    }
}

pub fn random_rotation_zyz<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let a = rng.random_range(0.0..=TAU);
    let b = rng.random_range(0.0..=TAU);
    let c = rng.random_range(0.0..=TAU);
    Rotation::from_euler_zyz(a, b, c)
}

pub fn random_rotation_haar<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-8 {
            let m = *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix();
            return Rotation::from_top_rows(&m.fixed_rows::<2>(0).into_owned());
        }
    }
}

/// Mixes an experiment seed with trial coordinates (splitmix64 finalizer
/// applied per component), giving independent, order-free trial seeds.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Worker count from `SHAPELIFT_THREADS`, if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var("SHAPELIFT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` inside a rayon pool honouring `SHAPELIFT_THREADS`.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit() {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
