//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation was handed a parameter outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two fields that must live on the same grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A field tagged dirichlet0 carries a nonzero wall row.
    #[error("boundary violation: {0}")]
    BoundaryViolation(String),

    /// The analyticity-radius multiplier would overflow f64 range.
    #[error("gevrey multiplier overflow: delta(t) * [xi_max]^(2/3) = {exponent:.3e} > {limit}")]
    MultiplierOverflow { exponent: f64, limit: f64 },

    /// The analyticity radius dropped below half its initial value.
    #[error("analyticity radius exhausted at t = {t:.6e}: delta(t) = {delta:.6e} <= delta0/2 = {floor:.6e}")]
    RadiusExhausted { t: f64, delta: f64, floor: f64 },

    /// Adaptive time-step control hit its floor.
    #[error("time step floor reached at t = {t:.6e}: dt = {dt:.3e} (floor {floor:.3e})")]
    StepFloor { t: f64, dt: f64, floor: f64 },

    /// A monitored run-time guard tripped.
    #[error("guard tripped at t = {t:.6e}: {reason}")]
    GuardTripped { t: f64, reason: String },

    /// An estimator was given too few data points.
    #[error("not enough data: {0}")]
    NotEnoughData(String),

    /// A norm or functional evaluated to NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
