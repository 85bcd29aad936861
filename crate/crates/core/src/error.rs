use thiserror::Error;

/// Errors raised by the library. Variants map one-to-one onto the CLI exit
/// code classes (usage, numeric failure).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("missing capability: {0}")]
    Capability(String),

    /// Non-finite objective or gradient; carries the iterate where it happened.
    #[error("numeric failure: {message} (iterate = {iterate:?})")]
    Numeric { message: String, iterate: Vec<f64> },

    #[error("Dykstra iteration did not converge after {iters} steps (last move {last_move:e})")]
    DykstraNonConvergence {
        iters: usize,
        last_move: f64,
        last: Vec<f64>,
    },

    /// Input data that cannot be used (e.g. nonpositive statistics for a log fit).
    #[error("data error: {0}")]
    Data(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable class name.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Usage(_) => "usage",
            Error::Capability(_) => "capability",
            Error::Numeric { .. } => "numeric",
            Error::DykstraNonConvergence { .. } => "dykstra",
            Error::Data(_) => "data",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
