use thiserror::Error;

/// Failure modes surfaced by estimators, samplers, and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data failed validation (empty, non-finite, or shape mismatch).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A tuning parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The data carry too little information for the requested estimate,
    /// e.g. identical rows, a singular design, or a singular covariance.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// An iterative solver failed to converge or a root was not bracketed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A simulation scenario combines options that are not defined.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// Reading or writing a data file failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A CSV file could not be parsed.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
