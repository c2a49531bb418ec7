use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A factorization or inversion broke down. `iteration` is filled in by
    /// the EM drivers when the failure happens inside the loop.
    #[error("numerical failure{}: {message}", .iteration.map(|t| format!(" at iteration {t}")).unwrap_or_default())]
    Numerical {
        message: String,
        iteration: Option<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[cfg(feature = "parallel")]
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical {
            message: msg.into(),
            iteration: None,
        }
    }

    /// Tags a numerical error with the EM iteration it occurred in.
    pub fn at_iteration(self, t: usize) -> Self {
        match self {
            Error::Numerical { message, .. } => Error::Numerical {
                message,
                iteration: Some(t),
            },
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}
