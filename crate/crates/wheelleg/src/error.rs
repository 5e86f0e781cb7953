use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("pose file does not match config: {0}")]
    Mismatch(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Core(#[from] wheelleg_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Config(_) | CliError::Core(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Csv(_) => 4,
        }
    }
}
