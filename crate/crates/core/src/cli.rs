//! Command-line interface.
//!
//! Exit codes: `0` success, `1` bad input (unreadable or inconsistent
//! files, invalid arguments), `2` solver did not converge (the result file
//! is still written).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::convex::SolverConfig;
use crate::dictionary::{learn_dictionary, CodingMode, DictLearnConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::experiments::skeleton::{motion_sequence, sample_pose, Motion};
use crate::experiments::{
    comparison_csv, compare_pipelines, derive_seed, make_pose_benchmark, orbit_rotation, phase_grid_with,
    pose_instance_from_shape, Difficulty, PhaseGridConfig, PoseBenchmarkConfig, PoseInstance, RotationSampling,
};
use crate::io::{
    json_files, normalize_landmarks, normalize_problem, read_json, write_json, write_text, DictionaryFile, ProblemFile,
    ResultFile, ShapeFile,
};
use crate::pipeline::{run_pipeline, Pipeline, PipelineSettings};
use crate::reconstruct::{mean_shape_coefficients, RotationUpdate};
use crate::shape::{Landmarks2D, ShapeDictionary};

#[derive(Debug, Parser)]
#[command(name = "shapelift", version, about = "3D shape and viewpoint from 2D landmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate shape and viewpoint for one problem.
    Solve(SolveArgs),
    /// Same as `solve` with an outlier-robust pipeline.
    SolveRobust(SolveArgs),
    /// Learn a sparse shape dictionary from a directory of shape files.
    LearnDict(LearnDictArgs),
    /// Exact-recovery frequency over a (p, z) grid.
    PhaseGrid(PhaseGridArgs),
    /// Generate synthetic problems (or training shapes).
    Simulate(SimulateArgs),
    /// Run several pipelines over a directory of problems.
    Compare(CompareArgs),
    /// Center and rescale the observation of a problem file.
    Normalize(NormalizeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RotMode {
    Stiefel,
    Svd,
}

impl From<RotMode> for RotationUpdate {
    fn from(m: RotMode) -> Self {
        match m {
            RotMode::Stiefel => RotationUpdate::StiefelGradient,
            RotMode::Svd => RotationUpdate::SvdProjection,
        }
    }
}

/// Solver parameters shared by `solve`, `solve-robust` and `compare`.
#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = RotMode::Stiefel)]
    pub rot_mode: RotMode,
    /// Use inputs as given instead of normalizing landmarks and bases.
    #[arg(long)]
    pub no_normalize: bool,
}

impl SolverArgs {
    fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            solver: SolverConfig {
                alpha: self.alpha,
                tol: self.tol,
                max_iter: self.max_iter,
                ..SolverConfig::default()
            },
            beta: self.beta,
            rot_mode: self.rot_mode.into(),
            mean_coefficients: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    /// Defaults to `convex` for `solve` and `robust-convex` for
    /// `solve-robust`.
    #[arg(long)]
    pub pipeline: Option<String>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LearnDictArgs {
    /// Directory of shape files (`*.json`).
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 500)]
    pub inner_iters: usize,
    /// Keep the training shapes' orientation (skip rotation alignment).
    #[arg(long)]
    pub no_align: bool,
    /// Allow signed codes (soft-threshold instead of clamping).
    #[arg(long)]
    pub signed: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PhaseGridArgs {
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80,160")]
    pub p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,20,35,50")]
    pub z: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Haar-uniform rotations instead of three uniform Euler angles.
    #[arg(long)]
    pub haar: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimMode {
    /// A motion sequence seen by a camera circling the subject.
    Orbit,
    /// Random poses with Gaussian landmark noise.
    Noise,
    /// Random poses with a fraction of landmarks replaced by outliers.
    Outliers,
    /// Training shapes for `learn-dict`.
    Training,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DifficultyArg {
    Easy,
    Hard,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: SimMode,
    /// Number of problems, frames or training shapes.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise level in normalized units (default 0.02 in noise mode, else 0).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Outlier fraction (default 0.2 in outliers mode, else 0).
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long, value_enum, default_value_t = DifficultyArg::Easy)]
    pub difficulty: DifficultyArg,
    /// Orbit mode: frames per camera revolution (default: `n`).
    #[arg(long)]
    pub frames_per_rev: Option<usize>,
    /// Orbit mode: motion family of the sequence.
    #[arg(long, default_value = "walk")]
    pub motion: String,
    /// Pose perturbation of generated training shapes / orbit sequences.
    #[arg(long, default_value_t = 0.6)]
    pub spread: f64,
    /// Dictionary size learned for problem modes.
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 240)]
    pub n_train: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Directory of problem files with `truth_shape`.
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, default_value = "convex,convex-refine,altern")]
    pub pipelines: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Add a mean wall-clock time column (not reproducible).
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged => 2,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Solve(args) => solve(&args, Pipeline::Convex, false),
        Command::SolveRobust(args) => solve(&args, Pipeline::RobustConvex, true),
        Command::LearnDict(args) => learn_dict(&args),
        Command::PhaseGrid(args) => phase_grid_cmd(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Compare(args) => compare(&args),
        Command::Normalize(args) => normalize(&args),
    }
}

/// Dictionary plus the settings it implies (mean-shape initialization).
struct LoadedDictionary {
    dict: ShapeDictionary,
    basis_scales: Option<Vec<f64>>,
    settings: PipelineSettings,
}

fn load_dictionary(path: &Path, solver: &SolverArgs) -> Result<LoadedDictionary> {
    let file: DictionaryFile = read_json(path)?;
    let raw = file.dictionary(path)?;
    let (dict, basis_scales) = if solver.no_normalize {
        (raw, None)
    } else {
        let (d, s) = raw.normalized().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        (d, Some(s))
    };
    let mut settings = solver.settings();
    if let Some(mean) = file.mean_shape(path)? {
        settings.mean_coefficients = Some(mean_shape_coefficients(&dict, &mean)?);
    }
    Ok(LoadedDictionary {
        dict,
        basis_scales,
        settings,
    })
}

fn check_landmarks(path: &Path, w: &Landmarks2D, dict: &ShapeDictionary) -> Result<()> {
    if w.num_points() != dict.p() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("problem has p = {} landmarks but the dictionary has p = {}", w.num_points(), dict.p()),
        });
    }
    Ok(())
}

fn solve(args: &SolveArgs, default: Pipeline, robust_only: bool) -> Result<Outcome> {
    let pipeline = match &args.pipeline {
        Some(name) => name.parse::<Pipeline>()?,
        None => default,
    };
    if robust_only && !pipeline.is_robust() {
        return Err(Error::InvalidArgument(format!(
            "solve-robust needs a robust pipeline, got `{pipeline}`"
        )));
    }
    let problem: ProblemFile = read_json(&args.problem)?;
    let w = problem.landmarks(&args.problem)?;
    let loaded = load_dictionary(&args.dict, &args.solver)?;
    check_landmarks(&args.problem, &w, &loaded.dict)?;
    let (w, normalization) = if args.solver.no_normalize {
        (w, None)
    } else {
        let (wn, n) = normalize_landmarks(&w)?;
        (wn, Some(n))
    };
    let out = run_pipeline(pipeline, &w, &loaded.dict, &loaded.settings)?;
    let mut result = ResultFile::from_output(&out);
    result.meta = Some(json!({
        "pipeline": pipeline.name(),
        "normalization": normalization,
        "basis_scales": loaded.basis_scales,
        "degenerate": out.degenerate,
    }));
    write_json(&args.out, &result)?;
    if out.degenerate {
        eprintln!("warning: motion blocks disagree on a shared rotation; refinement may be unreliable");
    }
    Ok(if out.report.converged {
        Outcome::Success
    } else {
        eprintln!(
            "warning: no convergence after {} iterations (primal {:.3e}, dual {:.3e})",
            out.report.iterations, out.report.primal_residual, out.report.dual_residual
        );
        Outcome::NotConverged
    })
}

fn learn_dict(args: &LearnDictArgs) -> Result<Outcome> {
    let files = json_files(&args.train)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no *.json shape files in {}", args.train.display())));
    }
    let shapes = files
        .iter()
        .map(|path| read_json::<ShapeFile>(path)?.shape(path))
        .collect::<Result<Vec<_>>>()?;
    let set = if args.no_align {
        TrainingSet::unaligned(shapes)?
    } else {
        TrainingSet::new(shapes)?
    };
    let mode = if args.signed {
        CodingMode::Signed
    } else {
        CodingMode::Nonnegative
    };
    let learned = learn_dictionary(
        &set,
        &DictLearnConfig {
            k: args.k,
            lambda: args.lambda,
            outer_iters: args.iters,
            inner_iters: args.inner_iters,
            seed: args.seed,
            mode,
            ..DictLearnConfig::default()
        },
    )?;
    let mut file = DictionaryFile::from_dictionary(&learned.dictionary, mode == CodingMode::Nonnegative);
    let mean = ShapeFile::from_shape(&set.mean_shape());
    file.meta = Some(json!({
        "mean_shape": mean.shape,
        "lambda": args.lambda,
        "seed": args.seed,
        "training_shapes": set.n(),
        "cost_trace": learned.cost_trace,
    }));
    write_json(&args.out, &file)?;
    Ok(Outcome::Success)
}

fn phase_grid_cmd(args: &PhaseGridArgs) -> Result<Outcome> {
    let cfg = PhaseGridConfig {
        sampling: if args.haar {
            RotationSampling::Haar
        } else {
            RotationSampling::EulerZyz
        },
        ..PhaseGridConfig::default()
    };
    let result = phase_grid_with(args.k, &args.p, &args.z, args.trials, args.seed, &cfg)?;
    write_text(&args.out, &result.to_csv())?;
    Ok(Outcome::Success)
}

fn write_problem(dir: &Path, index: usize, inst: &PoseInstance, meta: serde_json::Value) -> Result<()> {
    let mut file = ProblemFile::from_landmarks(&inst.w).with_truth(&inst.truth);
    file.meta = Some(meta);
    write_json(&dir.join("problems").join(format!("problem_{index:04}.json")), &file)
}

fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    if args.n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if let SimMode::Training = args.mode {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        for j in 0..args.n {
            let motion = Motion::ALL[j % Motion::ALL.len()];
            let file = ShapeFile {
                meta: Some(json!({ "motion": motion.name() })),
                ..ShapeFile::from_shape(&sample_pose(&mut rng, motion, args.spread))
            };
            write_json(&args.out.join(format!("shape_{j:04}.json")), &file)?;
        }
        return Ok(Outcome::Success);
    }

    let (sigma, fraction) = match args.mode {
        SimMode::Noise => (args.sigma.unwrap_or(0.02), args.fraction.unwrap_or(0.0)),
        SimMode::Outliers => (args.sigma.unwrap_or(0.0), args.fraction.unwrap_or(0.2)),
        _ => (args.sigma.unwrap_or(0.0), args.fraction.unwrap_or(0.0)),
    };
    let difficulty = match args.difficulty {
        DifficultyArg::Easy => Difficulty::Easy,
        DifficultyArg::Hard => Difficulty::Hard,
    };
    let bench = make_pose_benchmark(&PoseBenchmarkConfig {
        n_train: args.n_train,
        k: args.k,
        train_spread: args.spread,
        n_test: args.n,
        difficulty,
        noise_sigma: sigma,
        outlier_fraction: fraction,
        seed: args.seed,
        ..PoseBenchmarkConfig::default()
    })?;
    let mut dict_file = DictionaryFile::from_dictionary(&bench.dict, true);
    dict_file.meta = Some(json!({ "mean_shape": ShapeFile::from_shape(&bench.mean_shape).shape }));
    write_json(&args.out.join("dictionary.json"), &dict_file)?;

    let instances = match args.mode {
        SimMode::Orbit => {
            let motion = Motion::ALL
                .into_iter()
                .find(|m| m.name() == args.motion)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown motion `{}`", args.motion)))?;
            let fpr = args.frames_per_rev.unwrap_or(args.n);
            if fpr == 0 {
                return Err(Error::InvalidArgument("frames_per_rev must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, &[10]));
            let frames = motion_sequence(&mut rng, motion, args.spread.min(0.3), args.n)?;
            frames
                .iter()
                .enumerate()
                .map(|(t, s)| {
                    pose_instance_from_shape(s, &orbit_rotation(t, fpr), sigma, fraction, derive_seed(args.seed, &[11, t as u64]))
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => bench.instances,
    };
    for (i, inst) in instances.iter().enumerate() {
        write_problem(
            &args.out,
            i,
            inst,
            json!({ "outliers": inst.outliers, "sigma": sigma, "seed": args.seed }),
        )?;
    }
    Ok(Outcome::Success)
}

fn compare(args: &CompareArgs) -> Result<Outcome> {
    let pipelines = Pipeline::parse_list(&args.pipelines)?;
    if pipelines.is_empty() {
        return Err(Error::InvalidArgument("no pipelines given".into()));
    }
    let loaded = load_dictionary(&args.dict, &args.solver)?;
    let files = json_files(&args.instances)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no *.json problems in {}", args.instances.display())));
    }
    let instances = files
        .iter()
        .map(|path| {
            let problem: ProblemFile = read_json(path)?;
            let w = problem.landmarks(path)?;
            check_landmarks(path, &w, &loaded.dict)?;
            let truth = problem.truth(path)?.ok_or_else(|| Error::Format {
                path: path.clone(),
                message: "compare needs `truth_shape`".into(),
            })?;
            let w = if args.solver.no_normalize {
                w
            } else {
                normalize_landmarks(&w)?.0
            };
            Ok(PoseInstance {
                outliers: vec![false; w.num_points()],
                w,
                truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = compare_pipelines(&instances, &loaded.dict, &pipelines, &loaded.settings, args.timing)?;
    write_text(&args.out, &comparison_csv(&rows))?;
    Ok(Outcome::Success)
}

fn normalize(args: &NormalizeArgs) -> Result<Outcome> {
    let problem: ProblemFile = read_json(&args.input)?;
    let (out, _) = normalize_problem(&problem, &args.input)?;
    write_json(&args.out, &out)?;
    Ok(Outcome::Success)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_documented_values() {
        let cli = Cli::parse_from(["shapelift", "solve", "--problem", "p.json", "--dict", "d.json", "--out", "r.json"]);
        let Command::Solve(args) = cli.command else { panic!() };
        assert_eq!(args.solver.alpha, 1.0);
        assert_eq!(args.solver.beta, 0.1);
        assert_eq!(args.solver.tol, 1e-4);
        assert_eq!(args.solver.max_iter, 500);
        assert!(args.pipeline.is_none());
    }
}
