use thiserror::Error;

/// Errors raised by the simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("index {index} out of range (valid: {valid})")]
    IndexOutOfRange { index: usize, valid: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("reflection coefficient {index} has modulus {modulus}, expected 1")]
    UnitModulusViolation { index: usize, modulus: f64 },

    #[error("information matrix is singular (min/max eigenvalue ratio {ratio:e})")]
    SingularInformation { ratio: f64 },

    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    #[error("measurement is inconsistent with the geometry: {0}")]
    InconsistentMeasurement(String),

    #[error("QoS targets are infeasible under the power budget{}", frame.map(|m| format!(" (frame {m})")).unwrap_or_default())]
    InfeasibleQos { frame: Option<usize> },

    #[error("malformed problem: {0}")]
    InvalidProblem(String),

    #[error("failed to parse config: {0}")]
    Parse(String),

    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateGeometry(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
