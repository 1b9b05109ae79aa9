use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dataset shape or keying problem (unbalanced panel, unknown suffix, ...).
    #[error("structural error: {0}")]
    Structure(String),

    /// A missing cell reached a kernel that requires complete data.
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("collinear fixed-effects columns: {}", .columns.join(", "))]
    Collinear { columns: Vec<String> },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A sampler's draws left the finite range.
    #[error("sampler diverged: {0}")]
    Diverged(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown method label `{0}`")]
    UnknownMethod(String),

    #[error("method `{method}` cannot be used with {model}")]
    MethodModelMismatch { method: String, model: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
