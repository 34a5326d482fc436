//! Synthetic single-image pose benchmark and the pipeline comparison driver.
//!
//! A dictionary is learned from random skeleton poses; test instances are
//! further poses seen by an orthographic camera, normalized to unit variance
//! and optionally corrupted by noise and outliers.

use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::skeleton::{sample_pose, Motion};
use super::synthetic::{add_gaussian_noise, add_outliers, outlier_box};
use super::{derive_seed, with_thread_pool};
use crate::dictionary::{learn_dictionary, DictLearnConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::pipeline::{run_pipeline, Pipeline, PipelineSettings};
use crate::reconstruct::mean_shape_coefficients;
use crate::shape::{error_3d, Coefficients, Landmarks2D, PointSet, Rotation, Shape3D, ShapeDictionary};

/// Viewpoint and shape regime of the test instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Difficulty {
    /// Walking/running poses near their motion's mean, near-frontal views.
    #[default]
    Easy,
    /// Any motion with large angle perturbations, arbitrary azimuth.
    Hard,
}

impl Difficulty {
    fn spread(self) -> f64 {
        match self {
            Difficulty::Easy => 0.2,
            Difficulty::Hard => 0.6,
        }
    }

    fn motions(self) -> &'static [Motion] {
        match self {
            Difficulty::Easy => &[Motion::Walk, Motion::Run],
            Difficulty::Hard => &Motion::ALL,
        }
    }

    fn camera<R: Rng + ?Sized>(self, rng: &mut R) -> Rotation {
        let (azimuth, elevation) = match self {
            Difficulty::Easy => (rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1)),
            Difficulty::Hard => (rng.random_range(0.0..TAU), rng.random_range(-0.3..0.3)),
        };
        let m = Rotation::about_x(elevation).matrix() * Rotation::about_y(azimuth).matrix();
        Rotation::new(m).expect("product of rotations")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseBenchmarkConfig {
    pub n_train: usize,
    pub k: usize,
    pub lambda: f64,
    pub learn_iters: usize,
    /// Pose perturbation of the training set (all motions).
    pub train_spread: f64,
    pub n_test: usize,
    pub difficulty: Difficulty,
    /// Noise standard deviation in normalized units.
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl Default for PoseBenchmarkConfig {
    fn default() -> Self {
        Self {
            n_train: 240,
            k: 32,
            lambda: 0.1,
            learn_iters: 40,
            train_spread: 0.6,
            n_test: 20,
            difficulty: Difficulty::Easy,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed: 0,
        }
    }
}

/// One normalized observation with its ground truth.
#[derive(Debug, Clone)]
pub struct PoseInstance {
    pub w: Landmarks2D,
    /// True shape in the camera frame.
    pub truth: Shape3D,
    /// Landmarks replaced by outliers.
    pub outliers: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PoseBenchmark {
    /// Learned bases rescaled to unit average variance.
    pub dict: ShapeDictionary,
    /// Average aligned training shape.
    pub mean_shape: Shape3D,
    /// Fit of `dict` to `mean_shape`; the alternating baselines start here.
    pub mean_coefficients: Coefficients,
    pub instances: Vec<PoseInstance>,
}

impl PoseBenchmark {
    /// Pipeline settings that start the alternating baselines from the mean
    /// shape.
    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            mean_coefficients: Some(self.mean_coefficients.clone()),
            ..PipelineSettings::default()
        }
    }
}

/// Projects `shape` through `camera`, normalizes the observation and applies
/// the requested corruption. The truth is `camera · shape`, centered.
pub fn pose_instance_from_shape(
    shape: &Shape3D,
    camera: &Rotation,
    noise_sigma: f64,
    outlier_fraction: f64,
    seed: u64,
) -> Result<PoseInstance> {
    let truth = shape.rotated(camera).centralize()?.0;
    let clean = Landmarks2D::fully_visible(camera.top_rows() * shape.points())?;
    let (w, _) = clean.centralize()?.0.normalize_unit_variance()?;
    let noisy = add_gaussian_noise(&w, noise_sigma, derive_seed(seed, &[1]))?;
    let bbox = outlier_box(&w)?;
    let (w, outliers) = add_outliers(&noisy, outlier_fraction, &bbox, derive_seed(seed, &[2]))?;
    Ok(PoseInstance { w, truth, outliers })
}

/// Learns a dictionary and draws the test instances. The training set and
/// the test set share one seed but use independent streams.
pub fn make_pose_benchmark(cfg: &PoseBenchmarkConfig) -> Result<PoseBenchmark> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::InvalidArgument("n_train and n_test must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let train: Vec<Shape3D> = (0..cfg.n_train)
        .map(|j| sample_pose(&mut rng, Motion::ALL[j % Motion::ALL.len()], cfg.train_spread))
        .collect();
    let set = TrainingSet::new(train)?;
    let learned = learn_dictionary(
        &set,
        &DictLearnConfig {
            k: cfg.k,
            lambda: cfg.lambda,
            outer_iters: cfg.learn_iters,
            seed: derive_seed(cfg.seed, &[1]),
            ..DictLearnConfig::default()
        },
    )?;
    let (dict, _) = learned.dictionary.normalized()?;
    let mean_shape = set.mean_shape();
    let mean_coefficients = mean_shape_coefficients(&dict, &mean_shape)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    let motions = cfg.difficulty.motions();
    let instances = (0..cfg.n_test)
        .map(|i| {
            let motion = motions[rng.random_range(0..motions.len())];
            let shape = sample_pose(&mut rng, motion, cfg.difficulty.spread());
            let camera = cfg.difficulty.camera(&mut rng);
            pose_instance_from_shape(
                &shape,
                &camera,
                cfg.noise_sigma,
                cfg.outlier_fraction,
                derive_seed(cfg.seed, &[3, i as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PoseBenchmark {
        dict,
        mean_shape,
        mean_coefficients,
        instances,
    })
}

/// Result of one pipeline on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceOutcome {
    pub error_3d: f64,
    pub objective: f64,
    pub converged: bool,
    pub seconds: f64,
}

/// Runs every pipeline on every instance. Entry `[p][i]` is pipeline `p` on
/// instance `i`; `None` marks a pipeline error.
pub fn evaluate_pipelines(
    instances: &[PoseInstance],
    dict: &ShapeDictionary,
    pipelines: &[Pipeline],
    settings: &PipelineSettings,
) -> Result<Vec<Vec<Option<InstanceOutcome>>>> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no instances to compare".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..pipelines.len())
        .flat_map(|p| (0..instances.len()).map(move |i| (p, i)))
        .collect();
    let outcomes: Vec<Option<InstanceOutcome>> = with_thread_pool(|| {
        jobs.par_iter()
            .map(|&(p, i)| {
                let inst = &instances[i];
                let start = Instant::now();
                let out = run_pipeline(pipelines[p], &inst.w, dict, settings).ok()?;
                let seconds = start.elapsed().as_secs_f64();
                Some(InstanceOutcome {
                    error_3d: error_3d(&out.shape, &inst.truth).ok()?,
                    objective: out.report.objective,
                    converged: out.report.converged,
                    seconds,
                })
            })
            .collect()
    });
    Ok(outcomes.chunks(instances.len()).map(<[_]>::to_vec).collect())
}

/// Aggregated comparison of one pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub pipeline: Pipeline,
    pub instances: usize,
    pub failures: usize,
    /// Means over the instances the pipeline completed.
    pub mean_error_3d: f64,
    pub mean_objective: f64,
    /// Only filled when timing was requested (timings are not reproducible).
    pub mean_seconds: Option<f64>,
}

impl ComparisonRow {
    pub const CSV_HEADER: &'static str = "pipeline,instances,failures,mean_error_3d,mean_objective,mean_seconds";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.pipeline,
            self.instances,
            self.failures,
            self.mean_error_3d,
            self.mean_objective,
            self.mean_seconds.map(|s| s.to_string()).unwrap_or_default()
        )
    }
}

/// Runs each pipeline on each instance and aggregates in instance order, so
/// the table is independent of scheduling.
pub fn compare_pipelines(
    instances: &[PoseInstance],
    dict: &ShapeDictionary,
    pipelines: &[Pipeline],
    settings: &PipelineSettings,
    timing: bool,
) -> Result<Vec<ComparisonRow>> {
    let table = evaluate_pipelines(instances, dict, pipelines, settings)?;
    Ok(pipelines
        .iter()
        .zip(table)
        .map(|(&pipeline, outcomes)| {
            let done: Vec<InstanceOutcome> = outcomes.iter().flatten().copied().collect();
            let n = done.len() as f64;
            let mean = |f: fn(&InstanceOutcome) -> f64| {
                if done.is_empty() {
                    f64::NAN
                } else {
                    done.iter().map(f).sum::<f64>() / n
                }
            };
            ComparisonRow {
                pipeline,
                instances: outcomes.len(),
                failures: outcomes.len() - done.len(),
                mean_error_3d: mean(|o| o.error_3d),
                mean_objective: mean(|o| o.objective),
                mean_seconds: timing.then(|| mean(|o| o.seconds)),
            }
        })
        .collect())
}

/// CSV table of [`compare_pipelines`] output.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(ComparisonRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> PoseBenchmarkConfig {
        PoseBenchmarkConfig {
            n_train: 48,
            k: 8,
            learn_iters: 10,
            n_test: 2,
            ..PoseBenchmarkConfig::default()
        }
    }

    #[test]
    fn benchmark_is_deterministic_and_normalized() {
        let a = make_pose_benchmark(&small_config()).unwrap();
        let b = make_pose_benchmark(&small_config()).unwrap();
        assert_eq!(a.dict, b.dict);
        for (x, y) in a.instances.iter().zip(&b.instances) {
            assert_eq!(x.w, y.w);
            let sq: f64 = x.w.points().norm_squared() / (2.0 * x.w.num_points() as f64);
            assert!((sq - 1.0).abs() < 1e-9);
        }
        assert!(a.mean_coefficients.is_nonnegative());
    }

    #[test]
    fn outliers_follow_rounding_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = sample_pose(&mut rng, Motion::Walk, 0.2);
        let inst = pose_instance_from_shape(&shape, &Rotation::identity(), 0.0, 0.2, 9).unwrap();
        assert_eq!(inst.outliers.iter().filter(|&&m| m).count(), 3);
    }

    #[test]
    fn comparison_smoke() {
        let bench = make_pose_benchmark(&PoseBenchmarkConfig {
            n_test: 1,
            ..small_config()
        })
        .unwrap();
        let rows = compare_pipelines(&bench.instances, &bench.dict, &Pipeline::ALL, &bench.settings(), false).unwrap();
        assert_eq!(rows.len(), Pipeline::ALL.len());
        for r in &rows {
            assert_eq!(r.failures, 0, "{r:?}");
            assert!(r.mean_error_3d.is_finite() && r.mean_objective.is_finite());
            assert!(r.mean_seconds.is_none());
        }
        let csv = comparison_csv(&rows);
        assert_eq!(csv.lines().count(), Pipeline::ALL.len() + 1);
        assert!(compare_pipelines(&[], &bench.dict, &Pipeline::ALL, &bench.settings(), false).is_err());
    }
}
