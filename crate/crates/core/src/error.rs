use rvqa_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("input error: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error in {context} at byte {offset}: {reason}")]
    Format {
        context: String,
        offset: u64,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl CoreError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Self::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors a user fixes by changing configuration or paths.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            CoreError::Config(_) | CoreError::Io { .. } | CoreError::Nn(NnError::Config(_))
        )
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
