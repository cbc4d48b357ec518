use thiserror::Error;

pub type Result<T, E = SsflError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SsflError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient samples in class {class}: need {needed}, have {available}")]
    Capacity { class: usize, needed: usize, available: usize },

    #[error("undefined value: {0}")]
    Undefined(String),

    #[error("training diverged in round {round}: {detail}")]
    Diverged { round: usize, detail: String },

    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error("learning-rate step {step} out of range (total {total})")]
    OutOfRange { step: usize, total: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SsflError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SsflError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SsflError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
