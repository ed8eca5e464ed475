use std::io;
use std::path::PathBuf;

use obil_core::ObilError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("stage '{stage}' failed: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Core(#[from] ObilError),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 2 for configuration and validation problems, 3 for everything that
    /// fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

/// Tags an error with the pipeline stage it came from.
pub(crate) fn at_stage<E: std::fmt::Display>(stage: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Stage { stage: stage.to_string(), message: e.to_string() }
}
