use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The matrix could not be factorized even after the largest diagonal jitter.
    #[error("matrix is not positive definite (last jitter tried: {jitter:e})")]
    SingularMatrix { jitter: f64 },

    #[error("deep fade on node {node}: |h| = {magnitude:e}")]
    DeepFade { node: usize, magnitude: f64 },

    #[error("training failed: all {starts} starts produced no finite objective value")]
    TrainingFailed {
        starts: usize,
        diagnostics: Vec<String>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
