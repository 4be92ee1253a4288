use fuseg3d_core::CoreError;
use fuseg3d_tensor::ArchiveError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] CoreError),
    #[error("fusion error: {0}")]
    Fusion(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] ArchiveError),
    #[error("checkpoint format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
