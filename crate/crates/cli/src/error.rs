use std::io;
use std::path::Path;

pub type Result<T> = std::result::Result<T, CliError>;

/// Every failure maps to one of the documented exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("{0}")]
    Core(#[from] msr_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    /// Wraps a file read failure as a data error naming the path.
    pub(crate) fn read(path: &Path, e: io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}
