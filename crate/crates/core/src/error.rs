//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by the toolkit. Variants carry enough context to produce a
/// single-line, machine-parseable message at the CLI boundary.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Angle outside its documented range.
    #[error("angle out of range: {name} = {value} not in [{min}, {max}]")]
    AngleRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    /// A direction vector that cannot be normalized or is not unit length.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    /// A matrix that is not a rotation/reflection within tolerance.
    #[error("not an orthonormal transform: {0}")]
    NotOrthonormal(String),

    /// Mismatched or invalid array dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input audio shorter than the operation requires.
    #[error("clip too short: {got} samples, need at least {need}")]
    ClipTooShort { got: usize, need: usize },

    /// A structurally invalid label track or grid.
    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    /// A configuration value that fails validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Malformed text input (CSV and friends); line numbers are 1-based.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Malformed binary input (WAV, checkpoints, feature dumps).
    #[error("bad file format: {path}: {msg}")]
    Format { path: String, msg: String },

    /// Checkpoint written for a different model configuration.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Training diverged; carries the step that produced the non-finite loss.
    #[error("non-finite loss at iteration {iteration} (last finite loss: {last_finite})")]
    NonFiniteLoss { iteration: usize, last_finite: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
