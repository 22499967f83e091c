use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("internal invariant broken: {0}")]
    Internal(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("evaluation undefined: {0}")]
    Evaluation(String),

    #[error("i/o error on {path}: {source}")]
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
