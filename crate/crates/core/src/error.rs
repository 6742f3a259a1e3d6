use crate::game::MixedStrategy;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("game has no pure Nash equilibrium")]
    NoEquilibrium,

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure {
        last: Vec<MixedStrategy>,
        residual: f64,
        iterations: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("price {price} for node {node} is below its floor {floor}")]
    InvalidPrice { node: usize, price: f64, floor: f64 },

    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::Parse(_)
                | Error::Json(_)
                | Error::InvalidParameter(_)
                | Error::InvalidArgument(_)
        )
    }
}
