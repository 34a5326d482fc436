//! Named end-to-end reconstruction pipelines shared by the CLI and the
//! comparison experiments.
//!
//! | name                   | method                                                    |
//! |------------------------|-----------------------------------------------------------|
//! | `convex`               | penalized convex solve + per-basis direct reconstruction  |
//! | `direct`               | alias of `convex`                                         |
//! | `convex-refine`        | convex solve, rotation synchronization, alternation       |
//! | `altern`               | alternation from the mean-shape initialization            |
//! | `robust-convex`        | robust convex solve + direct reconstruction               |
//! | `robust-convex-refine` | robust convex solve, synchronization, robust alternation  |
//! | `robust-altern`        | robust alternation from the mean-shape initialization     |
//!
//! Non-robust pipelines centralize `W` over its visible landmarks; robust
//! ones estimate the translation themselves. Inputs are expected to be
//! normalized already (see [`crate::io::normalize_problem`]).

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2xX, Vector2};

use crate::convex::{solve_penalized, MotionStack, SolverConfig, SolverReport};
use crate::error::{Error, Result};
use crate::reconstruct::{
    alternating_minimize_with, direct_reconstruct, refine_reconstruct_with, AlternatingConfig, AlternatingResult,
    RotationUpdate,
};
use crate::robust::{solve_robust, RobustConfig};
use crate::shape::{compose_shape, Coefficients, Landmarks2D, PointSet, Rotation, Shape3D, ShapeDictionary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pipeline {
    Convex,
    Direct,
    ConvexRefine,
    Altern,
    RobustConvex,
    RobustConvexRefine,
    RobustAltern,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::Convex,
        Pipeline::Direct,
        Pipeline::ConvexRefine,
        Pipeline::Altern,
        Pipeline::RobustConvex,
        Pipeline::RobustConvexRefine,
        Pipeline::RobustAltern,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Convex => "convex",
            Pipeline::Direct => "direct",
            Pipeline::ConvexRefine => "convex-refine",
            Pipeline::Altern => "altern",
            Pipeline::RobustConvex => "robust-convex",
            Pipeline::RobustConvexRefine => "robust-convex-refine",
            Pipeline::RobustAltern => "robust-altern",
        }
    }

    pub fn is_robust(self) -> bool {
        matches!(
            self,
            Pipeline::RobustConvex | Pipeline::RobustConvexRefine | Pipeline::RobustAltern
        )
    }

    /// Whether the output carries one rotation per basis (rather than one
    /// shared rotation).
    pub fn per_basis_rotations(self) -> bool {
        matches!(self, Pipeline::Convex | Pipeline::Direct | Pipeline::RobustConvex)
    }

    /// Parses a comma-separated list of names.
    pub fn parse_list(s: &str) -> Result<Vec<Pipeline>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Pipeline::from_str)
            .collect()
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPipeline(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub solver: SolverConfig,
    /// Outlier weight for the robust pipelines.
    pub beta: f64,
    /// Rotation update used by every alternating stage.
    pub rot_mode: RotationUpdate,
    /// Initial coefficients for `altern`/`robust-altern`; `None` fits the
    /// dictionary to the average of its bases.
    pub mean_coefficients: Option<Coefficients>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            beta: 0.1,
            rot_mode: RotationUpdate::default(),
            mean_coefficients: None,
        }
    }
}

impl PipelineSettings {
    fn alternating(&self, robust: bool) -> AlternatingConfig {
        AlternatingConfig {
            alpha: self.solver.alpha,
            rot_mode: self.rot_mode,
            beta: robust.then_some(self.beta),
            ..AlternatingConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub pipeline: Pipeline,
    pub coefficients: Coefficients,
    /// Shared rotation (single-rotation pipelines).
    pub rotation: Option<Rotation>,
    /// Per-basis rotations (direct-reconstruction pipelines).
    pub rotations: Option<Vec<Rotation>>,
    /// Reconstructed shape in the camera frame.
    pub shape: Shape3D,
    pub e: Option<Matrix2xX<f64>>,
    pub t: Option<Vector2<f64>>,
    pub report: SolverReport,
    /// Motion blocks from the convex stage, when there is one.
    pub motions: Option<MotionStack>,
    /// Set when the convex blocks disagree too much on a shared rotation.
    pub degenerate: bool,
}

/// Shape-fit coefficients used when no mean shape is supplied: the NNLS fit
/// to the average basis.
pub fn default_mean_coefficients(dict: &ShapeDictionary) -> Result<Coefficients> {
    let mut mean = nalgebra::Matrix3xX::zeros(dict.p());
    for b in dict.bases() {
        mean += b.points();
    }
    mean /= dict.k() as f64;
    crate::reconstruct::mean_shape_coefficients(dict, &Shape3D::new(mean)?)
}

fn alternating_report(alt: &AlternatingResult, cfg: &AlternatingConfig) -> SolverReport {
    SolverReport {
        iterations: alt.iterations,
        primal_residual: 0.0,
        dual_residual: 0.0,
        objective: alt.objective,
        converged: alt.iterations < cfg.max_outer,
        objective_trace: alt.trace.clone(),
        residual_scale: 1.0,
        constraint_residual: None,
        final_mu: 0.0,
    }
}

/// Runs `pipeline` on one observation.
pub fn run_pipeline(
    pipeline: Pipeline,
    w: &Landmarks2D,
    dict: &ShapeDictionary,
    settings: &PipelineSettings,
) -> Result<PipelineOutput> {
    let robust = pipeline.is_robust();
    let w_in = if robust { w.clone() } else { w.centralize()?.0 };
    let alt_cfg = settings.alternating(robust);
    match pipeline {
        Pipeline::Convex | Pipeline::Direct | Pipeline::RobustConvex => {
            let (m, report, e, t) = if robust {
                let sol = solve_robust(&w_in, dict, &robust_config(settings))?;
                (sol.motions, sol.report, Some(sol.e), Some(sol.t))
            } else {
                let (m, r) = solve_penalized(&w_in, dict, &settings.solver)?;
                (m, r, None, None)
            };
            let direct = direct_reconstruct(&m, dict)?;
            Ok(PipelineOutput {
                pipeline,
                coefficients: direct.coefficients,
                rotation: None,
                rotations: Some(direct.rotations),
                shape: direct.shape,
                e,
                t,
                report,
                motions: Some(m),
                degenerate: false,
            })
        }
        Pipeline::ConvexRefine | Pipeline::RobustConvexRefine => {
            let (m, report) = if robust {
                let sol = solve_robust(&w_in, dict, &robust_config(settings))?;
                (sol.motions, sol.report)
            } else {
                solve_penalized(&w_in, dict, &settings.solver)?
            };
            if m.frobenius_norm() == 0.0 {
                return Err(Error::InvalidArgument(
                    "convex solution is identically zero; lower alpha to refine".into(),
                ));
            }
            let refined = refine_reconstruct_with(&m, &w_in, dict, &alt_cfg)?;
            let mut report = report;
            report.objective = refined.post_objective;
            Ok(PipelineOutput {
                pipeline,
                shape: refined.camera_shape(),
                coefficients: refined.coefficients,
                rotation: Some(refined.rotation),
                rotations: None,
                e: refined.e,
                t: refined.t,
                report,
                motions: Some(m),
                degenerate: refined.degenerate,
            })
        }
        Pipeline::Altern | Pipeline::RobustAltern => {
            let init = match &settings.mean_coefficients {
                Some(c) => c.clone(),
                None => default_mean_coefficients(dict)?,
            };
            let alt = alternating_minimize_with(&w_in, dict, &init, &Rotation::identity(), &alt_cfg)?;
            let shape = compose_shape(dict, &alt.coefficients)?.rotated(&alt.rotation);
            Ok(PipelineOutput {
                pipeline,
                report: alternating_report(&alt, &alt_cfg),
                coefficients: alt.coefficients,
                rotation: Some(alt.rotation),
                rotations: None,
                shape,
                e: alt.e,
                t: alt.t,
                motions: None,
                degenerate: false,
            })
        }
    }
}

fn robust_config(settings: &PipelineSettings) -> RobustConfig {
    RobustConfig {
        solver: settings.solver.clone(),
        beta: settings.beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Pipeline::ALL {
            assert_eq!(p.name().parse::<Pipeline>().unwrap(), p);
        }
        assert!(matches!("nope".parse::<Pipeline>(), Err(Error::UnknownPipeline(_))));
        assert_eq!(
            Pipeline::parse_list("convex, altern").unwrap(),
            vec![Pipeline::Convex, Pipeline::Altern]
        );
    }
}
