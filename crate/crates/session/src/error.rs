use std::path::PathBuf;

use ballbowl_core::{AnovaError, SimError, TaskError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    /// Bad or inconsistent configuration; the CLI maps this to exit code 2.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("unsupported archive schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Anova(#[from] AnovaError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl SessionError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| SessionError::Io { path, source }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, SessionError::Config(_) | SessionError::Task(TaskError::Config(_)))
    }
}

pub type Result<T, E = SessionError> = std::result::Result<T, E>;
