use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("input not found: {}", .0.display())]
    InputMissing(PathBuf),
    #[error(transparent)]
    Pipeline(#[from] serialtrack_core::Error),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::ConfigInvalid(_) => "config_invalid",
            CliError::InputMissing(_) => "input_missing",
            CliError::Pipeline(e) => e.code(),
            CliError::Output(_) => "output_error",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { code: self.code().to_string(), message: self.to_string() }
    }
}

/// Machine-readable failure description.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorRecord {
    pub code: String,
    pub message: String,
}

impl From<&serialtrack_core::Error> for ErrorRecord {
    fn from(e: &serialtrack_core::Error) -> Self {
        ErrorRecord { code: e.code().to_string(), message: e.to_string() }
    }
}
