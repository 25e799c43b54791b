use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("capacity error: {count} options exceed the {max} available letters")]
    Capacity { count: usize, max: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("rendering error: {0}")]
    Render(String),

    #[error("prompt of {len} tokens exceeds the context budget of {budget}")]
    Budget { len: usize, budget: usize },

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("embedding provider failed on {text:?}: {reason}")]
    Provider { text: String, reason: String },

    #[error("label {0:?} is not in the label map")]
    UnknownLabel(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("base parameter digest mismatch: checkpoint {expected}, backend {actual}")]
    DigestMismatch { expected: String, actual: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
