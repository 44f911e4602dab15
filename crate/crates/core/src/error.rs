use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violates the precondition of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scalar argument lies outside its admissible range.
    #[error("range error: {0}")]
    Range(String),

    /// The admissible interval for the interpolation exponent is empty.
    #[error("empty admissible interval for r: ({lower}, {upper})")]
    EmptyInterval { lower: f64, upper: f64 },

    /// A hypothesis of a bound does not hold for the given inputs.
    #[error("hypothesis failure: {0}")]
    Hypothesis(String),

    #[error("non-finite field value {value} at ({x}, {y})")]
    NonFinite { x: f64, y: f64, value: f64 },

    #[error("sample length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("trajectory diverged in replica {replica} at step {step}")]
    Overflow { replica: usize, step: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }
}
