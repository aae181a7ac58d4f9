use std::path::PathBuf;

use divsynth_annotator::StoreError;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] divsynth_core::Error),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error(transparent)]
    Annotator(#[from] StoreError),
}

/// Process exit status for each class of failure.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ENDPOINT: i32 = 3;

impl PipelineError {
    pub fn usage(message: impl Into<String>) -> Self {
        PipelineError::Usage(message.into())
    }

    pub fn file(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        PipelineError::File {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config { .. } => EXIT_USAGE,
            PipelineError::Core(e) if e.is_endpoint() => EXIT_ENDPOINT,
            _ => EXIT_DATA,
        }
    }
}
