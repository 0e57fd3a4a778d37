use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mcdd_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A self-check ran and reported failure.
    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("scenario (ood_class={ood_class}, fold={fold}) failed: {source}")]
    Scenario {
        ood_class: usize,
        fold: usize,
        #[source]
        source: mcdd_core::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    /// 1 for bad input or a failed check, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) | CliError::Scenario { source: e, .. } => {
                if e.is_validation() {
                    1
                } else {
                    2
                }
            }
            CliError::Config(_) | CliError::CheckFailed(_) | CliError::Json { .. } => 1,
            CliError::Io { .. } | CliError::Csv { .. } => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
