use thiserror::Error;

/// Errors produced by the design, bound and metric routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum UsdError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix cannot be extended to a unitary: largest singular value {sigma_max:.12} exceeds 1")]
    InfeasibleExtension { sigma_max: f64 },

    #[error("code has phase-space rank {rank} < {states}; a displacement (class 2) or double-detection (class 3) receiver is required")]
    RequiresClass2Or3 { rank: usize, states: usize },

    #[error("code has phase-space rank {rank} < {states} - 1; a double-detection (class 3) receiver is required")]
    RequiresClass3 { rank: usize, states: usize },

    #[error("unsupported code shape: {states} states on {modes} modes")]
    UnsupportedShape { states: usize, modes: usize },

    #[error("states are not linearly independent in Hilbert space (Gram min eigenvalue {min_eigenvalue:.3e})")]
    StatesNotLinearlyIndependent { min_eigenvalue: f64 },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("scaling exponent undefined: {0}")]
    UndefinedExponent(String),
}

pub type Result<T> = std::result::Result<T, UsdError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsdError::InvalidParameter(msg.into()))
}
