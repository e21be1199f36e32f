use thiserror::Error;

/// Error type shared by the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its domain (bad design
    /// constants, non-positive bandwidth, degenerate data, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A finite population is too small for the requested design.
    #[error("population too small: {0}")]
    Size(String),

    /// A numerical routine failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An estimator hit an undefined value (e.g. log of a zero density).
    #[error("evaluation failure: {0}")]
    Evaluation(String),

    /// Input data could not be read or has the wrong shape.
    #[error("data ingestion failure: {0}")]
    Ingestion(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// CSV parse failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
