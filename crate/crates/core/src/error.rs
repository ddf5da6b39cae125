use thiserror::Error;

pub type Result<T, E = QreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("index {index} out of range for player {player} with {actions} actions")]
    IndexOutOfRange {
        player: usize,
        index: usize,
        actions: usize,
    },

    #[error("strategy entry {index} is not strictly positive ({value})")]
    NonPositiveStrategy { index: usize, value: f64 },

    #[error("area {0} receives zero aggregate service")]
    ZeroAreaTotal(usize),

    #[error("symmetric eigendecomposition did not converge")]
    EigendecompositionFailure,

    #[error("singular value decomposition did not converge")]
    DecompositionFailure,

    #[error("infeasible design problem: violation {violation:.3e} persisted after {sweeps} sweeps")]
    InfeasibleDetected { violation: f64, sweeps: usize },

    #[error("inner equilibrium solve failed at outer iteration {iteration} (residual {residual_sq:.3e})")]
    InnerSolveFailure { iteration: usize, residual_sq: f64 },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl QreError {
    /// Short machine-readable tag, used by the CLI's `error:<kind>:` prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            QreError::DimensionMismatch(_) => "dimension-mismatch",
            QreError::MalformedInput(_) => "malformed-input",
            QreError::NonPositiveLambda(_) => "non-positive-lambda",
            QreError::NonFiniteInput(_) => "non-finite-input",
            QreError::IndexOutOfRange { .. } => "index-out-of-range",
            QreError::NonPositiveStrategy { .. } => "non-positive-strategy",
            QreError::ZeroAreaTotal(_) => "zero-area-total",
            QreError::EigendecompositionFailure => "eigendecomposition-failure",
            QreError::DecompositionFailure => "decomposition-failure",
            QreError::InfeasibleDetected { .. } => "infeasible",
            QreError::InnerSolveFailure { .. } => "inner-solve-failure",
            QreError::InvalidGeometry(_) => "invalid-geometry",
            QreError::InvalidConfig(_) => "invalid-config",
        }
    }

    /// Errors caused by bad user input rather than numerical trouble.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            QreError::DimensionMismatch(_)
                | QreError::MalformedInput(_)
                | QreError::NonPositiveLambda(_)
                | QreError::NonFiniteInput(_)
                | QreError::IndexOutOfRange { .. }
                | QreError::InvalidGeometry(_)
                | QreError::InvalidConfig(_)
        )
    }
}
