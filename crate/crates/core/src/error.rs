//! Error type shared by every solver and file format in the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by shape operations, solvers and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Every landmark is marked invisible.
    #[error("no observations")]
    NoObservations,

    /// A shape (or landmark set) with no spread, e.g. all-zero after centering.
    #[error("degenerate shape")]
    DegenerateShape,

    /// Two inputs disagree on a dimension.
    #[error("dimension mismatch in {what}: expected {expected}, got {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// An iterate became non-finite.
    #[error("numerical divergence")]
    NumericalDivergence,

    /// The equality constraint `Z B = W` has no solution or no usable structure.
    #[error("infeasible or degenerate constraint")]
    DegenerateConstraint,

    /// Rotation synchronization was given only zero blocks.
    #[error("nothing to synchronize")]
    NothingToSynchronize,

    /// A parameter outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown pipeline `{0}`")]
    UnknownPipeline(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON document; `path` names the offending file.
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Structurally valid JSON with inconsistent content.
    #[error("invalid file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
