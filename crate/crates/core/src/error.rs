//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument had the wrong length or an operation was applied to an
    /// incompatible object (e.g. projecting a non-ICNN network).
    #[error("contract violation in {context}: expected {expected}, got {got}")]
    Contract {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A numeric quantity that must be finite was NaN or infinite.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// A closed-loop rollout left the finite range of f64 before the horizon.
    #[error("rollout diverged at step {step} (t = {t:.6} s)")]
    DivergedRollout { step: usize, t: f64 },

    /// A configuration value failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Cost-curve normalization is undefined because the epoch-0 cost is zero.
    #[error("degenerate normalization: epoch-0 mean cost is zero")]
    DegenerateNormalization,

    /// A checkpoint file could not be read or parsed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Shorthand used by dimension checks.
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Contract {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
