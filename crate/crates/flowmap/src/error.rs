//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty snapshot pair set")]
    EmptyData,

    #[error("unknown system `{0}` (expected one of {known})", known = crate::ode::SYSTEM_NAMES.join(", "))]
    UnknownSystem(String),

    #[error("integration produced a non-finite state at t = {t}: {state:?}")]
    NonFiniteState { t: f64, state: Vec<f64> },

    #[error("non-finite loss in forward pass at batch index {batch_index}")]
    NonFiniteLoss { batch_index: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("model step produced a non-finite prediction from state {state:?}")]
    NonFinitePrediction { state: Vec<f64> },

    #[error("time grids do not match at index {index}: {left} vs {right}")]
    GridMismatch { index: usize, left: f64, right: f64 },

    #[error("series too short for a spectrum: {len} samples (need at least {min})")]
    SeriesTooShort { len: usize, min: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what} (line {line}): {detail}")]
    Format {
        what: &'static str,
        line: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for parse/format errors in the plain-text serializers.
    pub(crate) fn format(what: &'static str, line: usize, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            line,
            detail: detail.into(),
        }
    }
}
