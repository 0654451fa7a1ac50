use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("missing embeddings: {0}")]
    MissingEmbeddings(String),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] sgnms_core::Error),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable process exit code: 2 input, 3 missing embeddings, 4 generation
    /// failure, 5 training divergence.
    pub fn exit_code(&self) -> i32 {
        use sgnms_core::Error as E;
        match self {
            Self::Input(_) | Self::Io { .. } => 2,
            Self::MissingEmbeddings(_) => 3,
            Self::Core(E::MissingEmbedding { .. }) => 3,
            Self::Core(E::PlacementFailure { .. }) => 4,
            Self::Core(E::NonFiniteLoss { .. }) => 5,
            Self::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
