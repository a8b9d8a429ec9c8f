use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed or inconsistent input data (manifests, frames, checkpoints).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid parameters supplied by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite values or a failed numerical check.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status for this error: 1 usage, 2 data or io, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) => 1,
            Error::Shape(_) | Error::Data(_) | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
