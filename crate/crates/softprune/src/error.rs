use std::path::{Path, PathBuf};

/// Errors raised while reading, writing or running experiments.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] softprune_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file content; `position` names the byte offset or line.
    #[error("{}: {position}: {message}", path.display())]
    Parse {
        path: PathBuf,
        position: String,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, position: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            position: position.into(),
            message: message.into(),
        }
    }
}
