use std::path::PathBuf;

use incremental_effects::Error as CoreError;

/// Front-end failures, grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 I/O, 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Domain(_) | CoreError::Usage(_) => CliError::Config(e.to_string()),
            CoreError::Data(_) => CliError::Data(e.to_string()),
            CoreError::Fit { .. } | CoreError::RankDeficient { .. } | CoreError::Numerical(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
