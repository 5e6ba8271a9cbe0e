use std::path::PathBuf;

use thiserror::Error;

use crate::manifest::Stage;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage}: missing input artifact {path}")]
    MissingInput { stage: Stage, path: PathBuf },
    #[error("stage {stage}: stale artifact {path}: recorded sha256 {expected}, found {found}")]
    Stale {
        stage: Stage,
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("experiments were evaluated on different test splits: {0}")]
    SplitMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: Stage,
        source: bugloc_core::Error,
    },
    #[error(transparent)]
    Core(#[from] bugloc_core::Error),
}

impl CliError {
    /// 1 for problems with the request itself, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Manifest { .. } | CliError::Validation(_) | CliError::SplitMismatch(_) => 1,
            CliError::Core(bugloc_core::Error::Config(_))
            | CliError::Stage { source: bugloc_core::Error::Config(_), .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
