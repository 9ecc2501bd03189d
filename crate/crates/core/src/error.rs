use thiserror::Error;

/// Every failure the library can report. Variant names double as the
/// machine-readable tag printed by the CLI.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("DomainError: {0}")]
    Domain(String),
    #[error("ConfigError: {0}")]
    Config(String),
    #[error("FactorizationFailed: covariance of {points} points not positive definite after jitter {jitter:e}")]
    FactorizationFailed { points: usize, jitter: f64 },
    #[error("BoundaryViolation: point ({t1}, {t2}) is closer than 2*delta = {margin} to the domain boundary")]
    BoundaryViolation { t1: f64, t2: f64, margin: f64 },
    #[error("EmptyDataset: no sheets")]
    EmptyDataset,
    #[error("EmptySheet: sheet {0} has no observations")]
    EmptySheet(u64),
    #[error("TooFewNodes: quadrature needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("TooFewObservations: {0}")]
    TooFewObservations(String),
}

impl Error {
    /// True for errors caused by bad user input rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
