use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::linalg::LinalgError;
use crate::periodic_ode::OdeError;

/// Errors of the analysis layers built on top of the integrator and the
/// linear algebra kernel.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("domain error: {0}")]
    Eval(#[from] EvalError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("quadrature too coarse: residual {residual:e} exceeds {threshold:e}")]
    QuadratureTooCoarse { residual: f64, threshold: f64 },
    #[error("grid too coarse: stencil needs {needed} samples, have {available}")]
    GridTooCoarse { needed: usize, available: usize },
    #[error("grid of {n} unknowns exceeds the memory budget of {cap}")]
    MemoryBudgetExceeded { n: usize, cap: usize },
    #[error("eigensolver failed for domain length {length}: {message}")]
    Eigensolver { length: f64, message: String },
}

impl Error {
    /// Whether the error stems from invalid input rather than a numerical
    /// failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::InvalidInput(_)
                | Error::Ode(OdeError::InvalidSpec(_))
                | Error::Ode(OdeError::Parse { .. })
                | Error::Linalg(LinalgError::NotSquare { .. })
        )
    }

    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ode(OdeError::StepUnderflow { .. }) => "step_underflow",
            Error::Ode(OdeError::Domain { .. }) => "domain_error",
            Error::Ode(_) => "invalid_spec",
            Error::Linalg(_) => "linear_algebra",
            Error::Parse(_) => "parse_error",
            Error::Eval(_) => "domain_error",
            Error::InvalidInput(_) => "invalid_input",
            Error::PreconditionViolated(_) => "precondition_violated",
            Error::QuadratureTooCoarse { .. } => "quadrature_too_coarse",
            Error::GridTooCoarse { .. } => "grid_too_coarse",
            Error::MemoryBudgetExceeded { .. } => "memory_budget_exceeded",
            Error::Eigensolver { .. } => "eigensolver",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
