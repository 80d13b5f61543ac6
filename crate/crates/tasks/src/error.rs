use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Core(#[from] lsnn_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed data at byte {offset}: {msg}")]
    Parse { path: PathBuf, offset: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: u64,
        #[source]
        source: lsnn_core::Error,
    },
}

pub type Result<T> = std::result::Result<T, TaskError>;
