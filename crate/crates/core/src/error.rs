use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("series did not converge after {terms} terms")]
    NonConvergent { terms: usize },

    #[error("value exceeds the representable range ({0})")]
    Overflow(String),

    #[error("boundary system is singular (|det| = {det:e})")]
    SingularSystem { det: f64 },

    #[error("cancellation destroyed the result at alpha = {alpha}: error bound {bound:e}")]
    PrecisionLoss { alpha: f64, bound: f64 },

    #[error("single-threshold limit not converged: doubling the far boundary changed psi by {change:e}")]
    LimitNotConverged { change: f64 },

    #[error("finite-difference step collapsed for moment {order}: {reason}")]
    StepCollapse { order: u32, reason: String },

    #[error("degenerate interval: x0 = {x0} sits on a boundary where the limit diverges")]
    DegenerateInterval { x0: f64 },

    #[error("variance is negative beyond rounding ({variance:e})")]
    NegativeVariance { variance: f64 },

    #[error("no path exited before max_time ({n_censored} censored)")]
    AllCensored { n_censored: usize },

    #[error("ensemble has {n} samples, at least {required} are needed")]
    TooFewSamples { n: usize, required: usize },

    #[error("tail of the distance integral did not converge (bound {bound:e} at cut {cut})")]
    TailNotConverged { bound: f64, cut: f64 },

    #[error("target CV {target} is outside the achievable range [{lower}, {upper}]")]
    CvUnreachable { target: f64, lower: f64, upper: f64 },

    #[error("scalar search failed: {0}")]
    SearchFailed(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
