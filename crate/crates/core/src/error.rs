use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("N ≥ 1 violated: scene has no proposals")]
    EmptyScene,

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("unsupported schema_version {found:?} (this build reads {supported:?})")]
    Version { found: String, supported: String },

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("cannot separate {classes} classes at angle {angle} in dimension {dim}")]
    Separation {
        classes: usize,
        angle: f64,
        dim: usize,
    },

    #[error("objects `{a}` and `{b}` overlap at placement")]
    Placement { a: String, b: String },

    #[error("expert failed on condition seed(s) {0:?}")]
    ExpertFailure(Vec<u64>),

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
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
