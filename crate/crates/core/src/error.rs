use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: cannot decode PNG: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("{}: cannot encode PNG: {message}", path.display())]
    Encode { path: PathBuf, message: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("orbit diverged (|z| = {magnitude:e}); system is not contractive")]
    ContractivityViolation { magnitude: f64 },

    #[error("fractal generation stalled: {accepted} of {requested} accepted after {tried} candidates")]
    GenerationStalled {
        requested: usize,
        accepted: usize,
        tried: usize,
    },

    #[error("manifest build failed: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
