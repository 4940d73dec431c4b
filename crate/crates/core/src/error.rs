use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("window out of range: start {start} + length {len} exceeds trajectory length {horizon}")]
    WindowOutOfRange {
        start: usize,
        len: usize,
        horizon: usize,
    },

    #[error("dataset format error: {0}")]
    Format(String),

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("environment mismatch: expected {expected}, found {found}")]
    EnvMismatch { expected: String, found: String },

    #[error("invalid waypoint at position {position} (allowed range {lo}..={hi})")]
    InvalidWaypoint {
        position: usize,
        lo: usize,
        hi: usize,
    },

    #[error("scheme {scheme} is not applicable to a window of length {k}")]
    SchemeInapplicable { scheme: String, k: usize },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite values in {layer}")]
    NumericFailure { layer: String },

    #[error("mask has no loss targets")]
    EmptyTarget,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("rejection sampling exhausted at step {step} after {attempts} attempts")]
    RejectionExhausted { step: usize, attempts: usize },

    #[error("incomplete grid: missing cell ({row}, {column})")]
    IncompleteGrid { row: String, column: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidTrajectory(_) => "E_INVALID_TRAJECTORY",
            Error::WindowOutOfRange { .. } => "E_INDEX",
            Error::Format(_) => "E_FORMAT",
            Error::CorruptDataset(_) => "E_CORRUPT_DATASET",
            Error::EnvMismatch { .. } => "E_ENV_MISMATCH",
            Error::InvalidWaypoint { .. } => "E_INVALID_WAYPOINT",
            Error::SchemeInapplicable { .. } => "E_SCHEME_INAPPLICABLE",
            Error::InvalidAction(_) => "E_INVALID_ACTION",
            Error::InvalidState(_) => "E_INVALID_STATE",
            Error::Config(_) => "E_CONFIG",
            Error::NumericFailure { .. } => "E_NUMERIC",
            Error::EmptyTarget => "E_EMPTY_TARGET",
            Error::Checkpoint(_) => "E_CHECKPOINT",
            Error::RejectionExhausted { .. } => "E_REJECTION_EXHAUSTED",
            Error::IncompleteGrid { .. } => "E_INCOMPLETE_GRID",
            Error::EmptyDataset => "E_EMPTY_DATASET",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
