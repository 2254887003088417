use std::path::Path;

use pxg_core::PxgError;
use thiserror::Error;

/// Failures split by exit code: bad input is 2, anything after the inputs
/// were accepted is 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn file(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<PxgError> for CliError {
    fn from(e: PxgError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tags a core error that stems from user input as an input error.
pub trait InputContext<T> {
    fn into_input(self) -> CliResult<T>;
}

impl<T> InputContext<T> for pxg_core::Result<T> {
    fn into_input(self) -> CliResult<T> {
        self.map_err(|e| CliError::Input(e.to_string()))
    }
}
