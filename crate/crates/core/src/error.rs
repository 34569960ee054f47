use thiserror::Error;

/// Errors produced by the simulation, moment and data modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Hawkes parameters: {0}")]
    InvalidParams(String),

    /// The closed forms (and the parameter contract) divide by `alpha - beta`.
    #[error("alpha must differ from beta (both are {0})")]
    AlphaEqualsBeta(f64),

    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),

    #[error("time {t} is outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("grid resolution must be at least {min}, got {got}")]
    InvalidResolution { got: usize, min: usize },

    #[error("{0}")]
    InvalidInput(String),

    /// A data row failed validation. Rows are 1-based and count the header.
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
