use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::idx::IdxError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] dign_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Idx {
        path: PathBuf,
        #[source]
        source: IdxError,
    },
    #[error("{path}: line {line}: {message}")]
    ModelFormat { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0} check(s) failed")]
    CheckFailed(usize),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 validation, 2 failed verification, 3 I/O or unreadable artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Core(_) => 1,
            CliError::CheckFailed(_) => 2,
            CliError::Io { .. } | CliError::Idx { .. } | CliError::ModelFormat { .. } | CliError::Parse { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
