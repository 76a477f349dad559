use thiserror::Error;

/// Errors raised by the fmo library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FmoError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid problem data: {0}")]
    InvalidInstance(String),

    #[error("invalid mesh specification: {0}")]
    InvalidMesh(String),

    #[error("degenerate element {element}: Jacobian determinant {det:e}")]
    DegenerateElement { element: usize, det: f64 },

    #[error("projection precondition violated: {0}")]
    ProjectionPrecondition(String),

    #[error("least-squares problem is infeasible: {0}")]
    InfeasibleLeastSquares(String),

    #[error("subproblem case condition violated: {0}")]
    CaseCondition(String),

    #[error("negative quadratic form {value:e} for a feasible material state")]
    NegativeQuadratic { value: f64 },

    #[error("stiffness singular - check boundary conditions (lambda_min estimate {lambda_min:e})")]
    SingularStiffness { lambda_min: f64 },

    #[error("dense operation refused: N = {n} exceeds dense threshold {threshold}")]
    DenseThreshold { n: usize, threshold: usize },

    #[error("power iteration did not converge after {iterations} iterations (relative change {residual:e})")]
    PowerIteration { iterations: usize, residual: f64 },

    #[error("averaged iterate requested before the first step")]
    NoIterates,

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("format error: {0}")]
    Format(String),
}

impl FmoError {
    /// Whether the error stems from user input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            FmoError::DimensionMismatch { .. }
                | FmoError::InvalidInstance(_)
                | FmoError::InvalidMesh(_)
                | FmoError::DegenerateElement { .. }
                | FmoError::ProjectionPrecondition(_)
                | FmoError::CaseCondition(_)
                | FmoError::DenseThreshold { .. }
                | FmoError::InvalidConfig(_)
                | FmoError::Format(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FmoError::DimensionMismatch { .. } => "dimension_mismatch",
            FmoError::InvalidInstance(_) => "invalid_instance",
            FmoError::InvalidMesh(_) => "invalid_mesh",
            FmoError::DegenerateElement { .. } => "degenerate_element",
            FmoError::ProjectionPrecondition(_) => "projection_precondition",
            FmoError::InfeasibleLeastSquares(_) => "infeasible_least_squares",
            FmoError::CaseCondition(_) => "case_condition",
            FmoError::NegativeQuadratic { .. } => "negative_quadratic",
            FmoError::SingularStiffness { .. } => "singular_stiffness",
            FmoError::DenseThreshold { .. } => "dense_threshold",
            FmoError::PowerIteration { .. } => "power_iteration",
            FmoError::NoIterates => "no_iterates",
            FmoError::InvalidConfig(_) => "invalid_config",
            FmoError::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, FmoError>;

pub(crate) fn mismatch(context: impl Into<String>, expected: usize, found: usize) -> FmoError {
    FmoError::DimensionMismatch {
        context: context.into(),
        expected,
        found,
    }
}
