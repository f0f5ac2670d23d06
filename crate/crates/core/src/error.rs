use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {message}")]
    Config { field: &'static str, message: String },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("group {group} is empty in split `{split}`")]
    EmptyGroup { group: String, split: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{0}")]
    Degenerate(String),

    #[error("{0}")]
    Unsatisfiable(String),

    #[error("{file}: row {row}: {message}")]
    Schema { file: String, row: usize, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }

    pub fn degenerate(message: impl Into<String>) -> Self {
        Error::Degenerate(message.into())
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 input/config, 3 numerical, 4 unsatisfiable query.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::NonFinite { .. } | Error::Divergence { .. } => 3,
            Error::Unsatisfiable(_) => 4,
            _ => 2,
        }
    }
}
