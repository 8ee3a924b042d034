use thiserror::Error;

/// Errors raised by the model, samplers and fitting routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid scale ladder: {0}")]
    InvalidLadder(String),

    #[error("invalid grid resolution: {0}")]
    InvalidResolution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {index} ({x}, {y}, {t}) lies outside the window")]
    OutsideWindow { index: usize, x: f64, y: f64, t: f64 },

    #[error("points {first} and {second} coincide")]
    DuplicatePoint { first: usize, second: usize },

    #[error("scale index {index} out of range 1..={m}")]
    ScaleIndex { index: usize, m: usize },

    #[error("intensity is unbounded on the window")]
    UnboundedIntensity,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("rejection sampling gave up after {0} attempts")]
    RetryExhausted(usize),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::RetryExhausted(_) | Error::RankDeficient(_) | Error::NonConvergence(_) | Error::Degenerate(_)
        )
    }
}
