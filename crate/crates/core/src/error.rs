use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("taps are not maximal-length: period {period}, expected {expected}")]
    NonMaximalTaps { period: usize, expected: usize },

    #[error("peak grid ends at {grid_max_hz} Hz, band {band} needs peaks up to {needed_hz} Hz")]
    Coverage {
        band: usize,
        grid_max_hz: f64,
        needed_hz: f64,
    },

    #[error("degenerate stimulus: |U| = {magnitude:e} in band {band} (centre {center_hz} Hz) is below the floor")]
    DegenerateStimulus {
        band: usize,
        center_hz: f64,
        magnitude: f64,
    },

    #[error("invalid reference model: {0}")]
    InvalidReference(String),

    #[error("reference covariance is not positive definite (lambda = {lambda}); use shrinkage lambda > 0")]
    SingularReference { lambda: f64 },

    #[error("reference/stimulus mismatch: {0}")]
    ReferenceMismatch(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("sample rate mismatch for {id}: expected {expected} Hz, found {found} Hz")]
    RateMismatch {
        id: String,
        expected: f64,
        found: f64,
    },

    #[error("duplicate subject id {0:?}")]
    DuplicateId(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("eigendecomposition failed: {0}")]
    Decomposition(String),

    #[error("controller is not stable at upright: {0}")]
    Unstable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateStimulus { .. }
            | Error::InvalidReference(_)
            | Error::SingularReference { .. }
            | Error::Decomposition(_)
            | Error::Unstable(_) => 4,
            _ => 2,
        }
    }
}
