use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] qdec_core::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("csv schema: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
