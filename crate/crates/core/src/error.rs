use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain (for example a
    /// non-positive intervention parameter).
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller combined otherwise valid inputs in an unsupported way
    /// (misaligned rows, too few observations, dimension mismatch).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A nuisance regression could not be fitted.
    #[error("fit error{}: {message}", fold.map(|f| format!(" (fold {f})")).unwrap_or_default())]
    Fit {
        fold: Option<usize>,
        message: String,
    },

    /// The working-model design matrix is numerically rank deficient.
    #[error(
        "design matrix is rank deficient (reciprocal condition number {rcond:.3e}); collinear columns: {}",
        columns.join(", ")
    )]
    RankDeficient { rcond: f64, columns: Vec<String> },

    /// An iterative or adaptive numerical routine failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn fit(message: impl Into<String>) -> Self {
        Error::Fit {
            fold: None,
            message: message.into(),
        }
    }

    /// Attach a fold index to a fit error; other variants pass through.
    pub fn in_fold(self, fold: usize) -> Self {
        match self {
            Error::Fit { message, .. } => Error::Fit {
                fold: Some(fold),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
