use std::path::{Path, PathBuf};

use annoqa_core::ErrorKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] annoqa_core::Error),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Usage(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<CliError> },
}

impl CliError {
    /// 0 success, 1 parse/validation, 2 insufficient data, 3 curation,
    /// 4 evaluation, 5 configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Parse => 1,
                ErrorKind::Insufficient => 2,
                ErrorKind::Curation => 3,
                ErrorKind::Evaluation => 4,
                ErrorKind::Config => 5,
            },
            CliError::Read { .. } => 1,
            CliError::Write { .. } | CliError::Usage(_) => 5,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn read(path: &Path, source: std::io::Error) -> Self {
        CliError::Read {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
