use thiserror::Error;

/// Errors produced by the forecasting, calibration and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data for {what}: need at least {needed}, got {got}")]
    InsufficientData { what: &'static str, needed: usize, got: usize },

    #[error("invalid number of components K={k}: must be between 1 and {max}")]
    InvalidK { k: usize, max: usize },

    #[error("no actual curve for target year {year}")]
    Alignment { year: i32 },

    #[error("tuning parameter cannot be calibrated at horizon {horizon}: {reason}")]
    NonCalibrable { horizon: usize, reason: String },

    #[error("actual curve for year {year} is missing from the stream")]
    Stream { year: i32 },

    #[error("invalid interval: lower bound {lb} exceeds upper bound {ub}")]
    InvalidInterval { lb: f64, ub: f64 },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unrecognized file layout: {0}")]
    Schema(String),

    #[error("duplicate cell for year {year}, age {age}")]
    DuplicateCell { year: i32, age: String },

    #[error("year {year} has fewer than 2 valid rates; cannot impute")]
    Imputation { year: i32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the content or layout of input data files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema(_)
                | Error::DuplicateCell { .. }
                | Error::Imputation { .. }
                | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
