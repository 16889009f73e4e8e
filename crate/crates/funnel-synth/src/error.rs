//! Error types shared across the synthesis pipeline.

use thiserror::Error;

/// Errors produced while building or solving a funnel synthesis problem.
#[derive(Debug, Error)]
pub enum SynthError {
    /// Matrix or vector dimensions do not agree with the model contract.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    /// A quantity that must be positive (definite) is not.
    #[error("{0}")]
    NotPositive(String),

    /// The requested combination of options is not representable.
    #[error("invalid problem setup: {0}")]
    InvalidSetup(String),

    /// The chosen backend cannot express a required cone or cost.
    #[error("backend '{backend}' does not support {feature}")]
    UnsupportedCapability { backend: String, feature: String },

    /// The backend failed while solving (not an infeasibility certificate).
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// A nominal trajectory query fell outside the stored horizon.
    #[error("time {t} outside trajectory horizon [{t0}, {tf}]")]
    OutOfHorizon { t: f64, t0: f64, tf: f64 },
}

impl SynthError {
    /// Shorthand for a dimension mismatch with formatted expectations.
    pub fn dims(
        context: impl std::fmt::Display,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        SynthError::DimensionMismatch {
            context: context.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
