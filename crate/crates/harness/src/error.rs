use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("trace file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Engine(#[from] cbnn::Error),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure is the caller's configuration rather than a run
    /// going wrong.
    pub fn is_config(&self) -> bool {
        match self {
            Self::Config(_) | Self::Json(_) => true,
            Self::Engine(e) => matches!(e, cbnn::Error::Config(_)),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
