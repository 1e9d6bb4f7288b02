use std::path::PathBuf;

pub type Result<T, E = UdasError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum UdasError {
    #[error(transparent)]
    Core(#[from] udaseg_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: malformed CSV: {message}")]
    Csv { path: PathBuf, message: String },
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| UdasError::Io {
            path: path.into(),
            source,
        })
    }
}
