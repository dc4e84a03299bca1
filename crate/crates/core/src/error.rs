use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav {}: {message}", path.display())]
    Wav { path: PathBuf, message: String },

    #[error("malformed {what} file {}: {message}", path.display())]
    Format {
        what: &'static str,
        path: PathBuf,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),
}

/// Coarse error category, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Divergence(_) => ErrorKind::Numerical,
            Error::Io { .. } | Error::Wav { .. } | Error::Format { .. } | Error::Data(_) | Error::Shape(_) => {
                ErrorKind::Data
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            message: message.into(),
        }
    }
}
