use thiserror::Error;

/// Errors produced by the numerical kernels, oracles and simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, tolerance: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("frequency v[{index}] = {value} must be positive")]
    NonPositiveFrequency { index: usize, value: f64 },

    #[error("perturbation destroys strong convexity: alpha(eps) = {alpha:e}")]
    ConvexityLost { alpha: f64 },

    #[error("chi-square divergence is infinite (rho^2/pi is not integrable)")]
    Divergent,

    #[error("insufficient data: need at least {needed} samples in the fit window, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("non-positive value {value:e} at index {index} cannot be log-transformed")]
    NonPositiveValues { index: usize, value: f64 },

    #[error("unsupported friction kind for this operation: {0}")]
    UnsupportedFriction(String),

    #[error("numerical blow-up at step {step} (particle {particle}, value {value:e})")]
    NumericalBlowup { step: u64, particle: usize, value: f64 },

    #[error("weight matrix S is degenerate: b*c - a^2 = {det:e}")]
    DegenerateS { det: f64 },

    #[error("non-positive denominator {value:e} in rate function")]
    NonPositiveDenominator { value: f64 },

    #[error("invalid Lyapunov coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("no Lyapunov witness found below a = {cap:e}")]
    WitnessNotFound { cap: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
