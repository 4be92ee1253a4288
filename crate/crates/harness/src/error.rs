use fuseg3d_core::CoreError;
use fuseg3d_model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }

    /// Process exit status: 2 config, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_)
            | HarnessError::Core(CoreError::Config(_))
            | HarnessError::Model(ModelError::Config(CoreError::Config(_))) => 2,
            HarnessError::Numerical(_) => 4,
            _ => 3,
        }
    }
}
