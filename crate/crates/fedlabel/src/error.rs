//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch attributable to a specific network layer.
    #[error("dimension mismatch at layer {layer}: {detail}")]
    Dimension { layer: usize, detail: String },

    /// Shape mismatch outside the layer stack (loss inputs, score tables, ...).
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Decimation factor is not a positive integer ratio of the two rates.
    #[error("invalid rate: {0}")]
    InvalidRate(String),

    /// A partition request cannot be filled from the available rows.
    #[error("insufficient data for label {label}: {detail}")]
    Capacity { label: String, detail: String },

    /// Malformed CSV structure (missing header or column).
    #[error("schema error: {0}")]
    Schema(String),

    /// A server-side aggregation precondition failed.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Accuracy requested over an empty evaluation set or a zero table.
    #[error("undefined accuracy: {0}")]
    UndefinedAccuracy(String),

    /// Config file failed to parse at a specific line.
    #[error("config parse error at line {line}: {detail}")]
    ConfigParse { line: usize, detail: String },

    /// Config parsed but violates a semantic rule at a key path.
    #[error("config error at `{path}`: {detail}")]
    Config { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config { path: path.into(), detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
