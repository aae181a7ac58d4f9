use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate note id {0:?}")]
    DuplicateId(String),

    #[error("note {0:?} has empty text")]
    EmptyText(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("not enough notes: {what} needs {needed}, only {available} available")]
    Insufficient {
        what: String,
        needed: usize,
        available: usize,
    },

    #[error("tokenizer command failed: {0}")]
    Tokenizer(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("empty vector set")]
    EmptySet,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite coordinate at epoch {epoch}, point {point}")]
    NonFinite { epoch: usize, point: usize },

    #[error("curve fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("no positive labels")]
    NoPositives,

    #[error("unknown template {0:?}")]
    UnknownTemplate(String),

    #[error("template {template:?}: {message}")]
    Template { template: String, message: String },

    #[error("shot note {0:?} not found")]
    MissingNote(String),

    #[error("note {id:?}: could not parse a label after {attempts} attempts")]
    Unparseable { id: String, attempts: usize },

    #[error("note {id:?}: empty completion after {attempts} attempts")]
    EmptyCompletion { id: String, attempts: usize },

    #[error("id {0:?} appears in both the test set and the training material")]
    IdOverlap(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// True for failures that originate at a remote service rather than in
    /// local data or arguments.
    pub fn is_endpoint(&self) -> bool {
        matches!(self, Error::Endpoint(_) | Error::EmptyCompletion { .. })
    }
}
