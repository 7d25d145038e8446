use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter vector: {0}")]
    InvalidTheta(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("non-finite log-likelihood for subject {subject_id} at theta = {theta}")]
    NonFiniteLikelihood { subject_id: String, theta: String },
    #[error("non-finite objective: {0}")]
    NonFiniteObjective(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("all importance weights are zero or non-finite")]
    DegenerateWeights,
    #[error("{failed} of {total} replicates failed (limit is 20%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Whether the error comes from numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLikelihood { .. }
                | Error::NonFiniteObjective(_)
                | Error::NotPositiveDefinite(_)
                | Error::DegenerateWeights
                | Error::TooManyFailures { .. }
        )
    }
}
