//! Error type shared across the crate.

/// Failure modes of the numerical pipelines.
///
/// Operations that can degrade gracefully (partial orbit segments, flagged
/// samples) report flags on their result types instead of erroring; `Error`
/// is reserved for outcomes the caller must handle.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A chart point left the upper half-plane.
    #[error("point outside the chart domain (y = {y:.6e})")]
    OutsideDomain { y: f64 },

    /// Adaptive step control could not meet the local error target.
    #[error("step size underflow at t = {t:.6} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    /// An iterative solve ran out of iterations.
    #[error("{what} did not converge (residual {residual:.3e})")]
    NoConvergence { what: &'static str, residual: f64 },

    /// A sign-change bracket for bisection could not be established.
    #[error("no bracket found for {what} near {near:.6}")]
    NoBracket { what: &'static str, near: f64 },

    /// A limit did not settle within the allowed horizon.
    #[error("{what} showed no Cauchy convergence within horizon {horizon:.1} (last delta {last_delta:.3e})")]
    NoCauchy {
        what: &'static str,
        horizon: f64,
        last_delta: f64,
    },

    /// A precondition on the inputs failed (e.g. vectors not asymptotic).
    #[error("precondition violated: {msg}")]
    Precondition { msg: String },

    /// Model construction or validation failed.
    #[error("invalid model: {msg}")]
    InvalidModel { msg: String },

    /// Model file or CLI configuration could not be parsed.
    #[error("config error: {msg}")]
    Config { msg: String },
}

impl Error {
    /// Classifies the error for process exit codes: configuration problems
    /// versus numeric failures.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidModel { .. })
    }
}
