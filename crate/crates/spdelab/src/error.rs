use thiserror::Error;

/// Errors raised by the library. Each variant names the failed contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("class violation: {0}")]
    ClassViolation(String),
    #[error("numerical precision: {0}")]
    NumericalPrecision(String),
    #[error("symbol domain: {0}")]
    SymbolDomain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("time ordering: {0}")]
    Ordering(String),
    #[error("unsupported parameter: {0}")]
    UnsupportedParameter(String),
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("kernel validity: {0}")]
    KernelValidity(String),
    #[error("kernel has no density: {0}")]
    MissingDensity(String),
    #[error("grid alignment: {0}")]
    Alignment(String),
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
