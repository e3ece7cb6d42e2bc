use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Validation problems (bad input, bad config) map to exit code 1,
    /// runtime and numeric failures to 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownNode(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Parse { .. } => 1,
            Error::Dimension(_) | Error::NonFinite(_) | Error::Io(..) => 2,
        }
    }
}
