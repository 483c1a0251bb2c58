use std::path::PathBuf;

/// Runner failures, split by the exit status they map to.
#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    /// The configuration (or a file it names) is invalid.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A dataset file does not follow its declared layout.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] approxfl_core::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RunnerError>;

impl RunnerError {
    pub fn config(msg: impl Into<String>) -> Self {
        RunnerError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RunnerError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        RunnerError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 1 for configuration problems, 2 for failures
    /// while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunnerError::Config(_) | RunnerError::Core(approxfl_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}
