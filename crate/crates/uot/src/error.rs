use thiserror::Error;

/// Errors surfaced by construction and solver entry points.
///
/// Infeasibility of a dual candidate and `+inf` transport values are *data*,
/// not errors; only structural misuse lands here.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum UotError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("spaces are incompatible: {0}")]
    SpaceMismatch(String),

    #[error("invalid ground metric matrix: {0}")]
    InvalidMetric(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid coupling: {0}")]
    InvalidCoupling(String),

    #[error("invalid cost specification: {0}")]
    InvalidCost(String),

    #[error("cost is not defined at the requested point: {0}")]
    OutsideDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("potential is infeasible: {0}")]
    InfeasiblePotential(String),

    #[error("negative cycle detected through atoms {cycle:?}: support is not cyclically monotone")]
    NegativeCycle { cycle: Vec<usize> },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),
}

pub type Result<T> = std::result::Result<T, UotError>;
