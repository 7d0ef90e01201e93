use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("sensor index {index} out of range for {m} sensors")]
    InvalidIndex { index: usize, m: usize },

    /// Sensor indices in messages are 1-based.
    #[error("point coincides with sensor {}", .index + 1)]
    AtSensor { index: usize },

    #[error("summed update matrix is numerically singular (condition number {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("range difference {value} for pair ({}, {}) is not below the sensor baseline {baseline}", .i + 1, .j + 1)]
    DegenerateMeasurement {
        i: usize,
        j: usize,
        value: f64,
        baseline: f64,
    },

    #[error("range difference for pair ({}, {}) equals the sensor baseline; the locus is a ray", .i + 1, .j + 1)]
    RayCase { i: usize, j: usize },

    #[error("missing range difference for pair ({}, {})", .i + 1, .j + 1)]
    MissingPair { i: usize, j: usize },

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
    /// Short stable identifier, suitable for machine parsing.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::InvalidIndex { .. } => "invalid-index",
            Error::AtSensor { .. } => "at-sensor",
            Error::SingularSystem { .. } => "singular-system",
            Error::DegenerateMeasurement { .. } => "degenerate-measurement",
            Error::RayCase { .. } => "ray-case",
            Error::MissingPair { .. } => "missing-pair",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
