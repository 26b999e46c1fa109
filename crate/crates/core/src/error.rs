//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmcError {
    /// An argument is outside the documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Adaptive quadrature did not reach the requested tolerance.
    #[error("quadrature did not converge: estimate {estimate}, error {error:.3e}, tol {tol:.3e}")]
    Quadrature { estimate: f64, error: f64, tol: f64 },
    /// Dense factorization or eigensolve failed.
    #[error("factorization failed: {0}")]
    Factorization(String),
    /// PSD repair changed the covariance by more than the configured gate.
    #[error("PSD repair magnitude {magnitude:.3e} exceeds gate {gate:.3e}")]
    RepairGate { magnitude: f64, gate: f64 },
    /// A matrix or grid would exceed the configured memory cap.
    #[error("memory guard: {cells} cells exceed cap {cap}")]
    MemoryGuard { cells: usize, cap: usize },
    /// A quantity whose definition needs a positive denominator was degenerate.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    /// A Monte Carlo estimate had no usable samples.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    /// Reading or writing a persisted artifact failed.
    #[error("i/o: {0}")]
    Io(String),
    /// A persisted artifact could not be parsed.
    #[error("format: {0}")]
    Format(String),
}

impl From<std::io::Error> for GmcError {
    fn from(e: std::io::Error) -> Self {
        GmcError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for GmcError {
    fn from(e: serde_json::Error) -> Self {
        GmcError::Format(e.to_string())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GmcError>;

pub(crate) fn invalid(msg: impl Into<String>) -> GmcError {
    GmcError::InvalidArgument(msg.into())
}
