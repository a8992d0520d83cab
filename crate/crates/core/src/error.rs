use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MagicError>;

#[derive(Debug, Error)]
pub enum MagicError {
    /// Malformed input file. `row` is 1-based and counts the header as row 1.
    #[error("{path}: row {row}, column '{column}': {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("rank-deficient covariate design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MagicError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MagicError::Io {
            path: path.into(),
            source,
        }
    }
}
