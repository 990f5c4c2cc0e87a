use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-interpolable basis: {0}")]
    NonInterpolable(String),

    #[error("invalid Gauss-Newton matrix: {0}")]
    InvalidCurvature(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no qualifying covariance found in budget of {trials} trials")]
    SearchExhausted { trials: usize },

    #[error("no stable configuration: every configuration diverged")]
    NoStableConfiguration,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
