use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("plot error: {0}")]
    Plot(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CoreError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
