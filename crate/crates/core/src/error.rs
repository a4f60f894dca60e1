use thiserror::Error;

/// Errors raised by the simulation engine and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("scenario requires pairwise samples but only summary statistics were supplied")]
    MissingStats,

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("scenario is not contractive: {0}")]
    NotContractive(String),

    #[error("no admissible interaction constant K2 down to {floor:e}")]
    NoAdmissibleK2 { floor: f64 },

    #[error("divergence detected at step {step}, particle {particle} (|x| = {magnitude:e})")]
    DivergenceDetected {
        step: i64,
        particle: usize,
        magnitude: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("operation requires a {expected} scenario")]
    WrongRegime { expected: &'static str },

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("exact assignment capped at {cap} points, got {n}")]
    CapExceeded { n: usize, cap: usize },

    #[error("non-positive value {value} at index {index}")]
    NonPositiveValue { index: usize, value: f64 },

    #[error("grid not period-aligned: {0}")]
    GridNotAligned(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Variant name, used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingStats => "MissingStats",
            Error::EmptyEnsemble => "EmptyEnsemble",
            Error::NotContractive(_) => "NotContractive",
            Error::NoAdmissibleK2 { .. } => "NoAdmissibleK2",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::Domain(_) => "Domain",
            Error::WrongRegime { .. } => "WrongRegime",
            Error::SizeMismatch { .. } => "SizeMismatch",
            Error::Dimension(_) => "Dimension",
            Error::CapExceeded { .. } => "CapExceeded",
            Error::NonPositiveValue { .. } => "NonPositiveValue",
            Error::GridNotAligned(_) => "GridNotAligned",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
