use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("transport error (retryable): {0}")]
    Transport(String),

    #[error("http status {status} from {url}")]
    Status { status: u16, url: String },

    #[error("fatal error for engine {engine}: {reason}")]
    EngineFatal { engine: String, reason: String },

    #[error("missing input {path}: run the `{stage}` stage first")]
    MissingStage { path: PathBuf, stage: &'static str },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image decode failed: {0}")]
    Image(String),

    #[error("search budget of {cap} exhausted")]
    BudgetExhausted { cap: String },
}

impl Error {
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport(_) => true,
            Error::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }
}
