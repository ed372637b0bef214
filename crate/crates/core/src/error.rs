use thiserror::Error;

/// Errors raised while building or using a problem instance.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a model invariant. `field` is a dotted path.
    #[error("{field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("the dynamic program requires arrival_prob = 0 (got {0})")]
    ArrivalsInDp(f64),

    #[error("power cost must be linear with a positive slope for this operation")]
    NonLinearPowerCost,

    #[error("success function is not sigmoidal: {0}")]
    NotSigmoidal(String),

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
