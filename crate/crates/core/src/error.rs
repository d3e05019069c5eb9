use thiserror::Error;

/// Errors raised by the cone primitives, the fixed-point engine and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cone mismatch: {left} vs {right}")]
    ConeMismatch { left: String, right: String },

    #[error("weight is not in the interior of the dual cone")]
    NotInteriorWeight,

    #[error("element is not in the cone (violation {violation:e})")]
    NotInCone { violation: f64 },

    #[error("cannot take the minimum of an empty set")]
    EmptySet,

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("iteration diverged at step {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value vector has a negative entry at index {index} ({value:e})")]
    NegativeLambda { index: usize, value: f64 },

    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("gain is not stabilizing (spectral radius {rho})")]
    UnstableGain { rho: f64 },

    #[error("problem has no goal state")]
    NoGoal,

    #[error("goal state {0} is not absorbing with zero cost")]
    GoalNotAbsorbing(usize),

    #[error("no goal state is reachable from state {0}")]
    GoalUnreachable(usize),

    #[error("desirability system is singular (spectral radius {rho})")]
    SingularSystem { rho: f64 },

    /// `to == None` stands for the aggregated goal transition.
    #[error("transition from state {from} to {} is outside the support of the passive dynamics", fmt_target(.to))]
    SupportViolation { from: usize, to: Option<usize> },

    #[error("node {0} cannot reach the goal set")]
    UnreachableNode(usize),

    #[error("inner matrix R + B^T P B is singular")]
    SingularInnerMatrix,

    #[error("bad rollout configuration: {0}")]
    BadSeedConfig(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("solution failed certification: {0}")]
    CertificationFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

fn fmt_target(to: &Option<usize>) -> String {
    match to {
        Some(j) => format!("state {j}"),
        None => "the goal set".to_string(),
    }
}
