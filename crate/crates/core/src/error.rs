use thiserror::Error;

/// Errors raised by the design, analysis and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MrctError {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested design cannot reach the target precision.
    #[error(
        "infeasible design: tau/(delta+M) = {ratio:.4} must be below sqrt(R)/(z_(1-alpha)+z_(1-beta)) = {limit:.4} (R = {regions})"
    )]
    Infeasible {
        ratio: f64,
        limit: f64,
        regions: usize,
    },

    /// A closed-form result is unavailable because its proviso is violated.
    #[error("not available: {0}")]
    NotAvailable(String),

    /// The root finder was handed an interval without a sign change.
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    Bracketing {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    /// Quadrature or iteration failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A calibration target lies outside the range the model family can reach.
    #[error("calibration target {target} outside achievable range [{lo}, {hi}]")]
    Calibration { target: f64, lo: f64, hi: f64 },

    /// Estimation from data failed (degenerate sample, monotone likelihood, ...).
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// The censoring distribution does not cover the integration horizon.
    #[error("censoring support ends before the horizon: {0}")]
    Support(String),
}

pub type Result<T> = std::result::Result<T, MrctError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(MrctError::Domain(msg.into()))
}
