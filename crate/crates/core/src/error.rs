//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised while constructing, solving or auditing continuous tests.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EtestError {
    /// Two objects that must share an outcome set do not.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    /// A probability mass function violates its invariants.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    /// A level outside [0, 1] or otherwise unusable for the operation.
    #[error("invalid level alpha = {0}")]
    InvalidLevel(f64),
    /// Any other malformed argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A test value exceeds the cap 1/alpha.
    #[error("value {value} exceeds the cap {cap}")]
    AboveCap { value: f64, cap: f64 },
    /// The utility has no inverse derivative (the h = 1 power target).
    #[error("utility derivative is not invertible; use the Neyman-Pearson solver")]
    NonInvertible,
    /// A required object could not be shown to exist numerically.
    #[error("existence failure: {0}")]
    ExistenceFailure(String),
    /// The problem lies outside the supported framework.
    #[error("unsupported problem: {0}")]
    Unsupported(String),
    /// A solution violates a positivity requirement.
    #[error("positivity violation: {0}")]
    Positivity(String),
    /// An iterative method did not reach its tolerance.
    #[error("no convergence: {0}")]
    NonConvergence(String),
    /// An exhaustive procedure would be too large.
    #[error("instance too large: {0}")]
    TooLarge(String),
    /// The wealth process has hit zero and cannot continue.
    #[error("wealth is zero; the process is absorbed")]
    Absorbed,
}

/// Coarse classification of errors, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed or inconsistent input.
    Input,
    /// The mathematical problem has no supported solution.
    Infeasible,
    /// A numerical method failed to converge.
    NonConvergence,
}

impl EtestError {
    /// Returns the category of this error.
    pub fn category(&self) -> ErrorCategory {
        match self {
            EtestError::ModelMismatch(_)
            | EtestError::InvalidDistribution(_)
            | EtestError::InvalidLevel(_)
            | EtestError::InvalidArgument(_)
            | EtestError::AboveCap { .. }
            | EtestError::TooLarge(_) => ErrorCategory::Input,
            EtestError::NonInvertible
            | EtestError::ExistenceFailure(_)
            | EtestError::Unsupported(_)
            | EtestError::Positivity(_)
            | EtestError::Absorbed => ErrorCategory::Infeasible,
            EtestError::NonConvergence(_) => ErrorCategory::NonConvergence,
        }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, EtestError>;
