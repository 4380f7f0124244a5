use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("dataset is empty{}", .0.as_deref().map(|s| format!(" ({s})")).unwrap_or_default())]
    EmptyDataset(Option<String>),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("incompatible artifacts: expected layout {expected}, found {found}")]
    Compatibility { expected: String, found: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
