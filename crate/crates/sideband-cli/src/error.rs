use std::path::PathBuf;

use crate::codec::CodecError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("record {path}: {source}")]
    Record { path: PathBuf, source: CodecError },
    #[error("numeric failure: {0}")]
    Numeric(#[from] sideband::Error),
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Record { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Wraps a library error raised by a parameter check: a config error.
    pub fn invalid(e: impl Into<sideband::Error>) -> Self {
        CliError::Config(e.into().to_string())
    }
}

/// Any library error raised while computing.
pub fn numeric<E: Into<sideband::Error>>(e: E) -> CliError {
    CliError::Numeric(e.into())
}
