use thiserror::Error;

/// Exit status for a failed run: 2 for configuration and validation
/// problems, 1 for everything else.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("cannot use config {path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] impulse_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        use impulse_core::Error as E;
        match self {
            LabError::Config { .. } | LabError::Invalid(_) | LabError::Validation(_) => 2,
            LabError::Core(
                E::InvalidProblem(_)
                | E::NonConforming(_)
                | E::NoTruncationRadius
                | E::InvalidGrid(_),
            ) => 2,
            _ => 1,
        }
    }
}
