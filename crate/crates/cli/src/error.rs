use std::path::PathBuf;

use mssl_sim::SimError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] mssl_core::Error),

    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: mssl_core::Error },

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("cannot encode output: {0}")]
    Json(#[from] serde_json::Error),
}

fn core_code(e: &mssl_core::Error) -> i32 {
    match e {
        mssl_core::Error::Parse(_) | mssl_core::Error::Io(_) => 1,
        _ => 2,
    }
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 1 for I/O and parse failures, 2 for usage and domain errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) | CliError::Input { source: e, .. } => core_code(e),
            CliError::Sim(SimError::Core(e)) => core_code(e),
            CliError::Sim(SimError::Toml(_) | SimError::Io(_) | SimError::Csv(_)) => 1,
            CliError::Sim(_) => 2,
            CliError::Io(_) | CliError::Json(_) => 1,
        }
    }
}
