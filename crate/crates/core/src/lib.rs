//! Explicit Bellman equations over proper cones.
//!
//! The value of an infinite-horizon problem lives in a cone (nonnegative
//! orthant or semidefinite matrices), and the Bellman map splits into a
//! fixed part plus independent per-block minimizations. [`engine`] iterates
//! such maps; [`ssp`], [`lqr`] and [`ldp`] are the three concrete problem
//! classes, and [`oracle`] holds independent reference solvers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cone;
pub mod engine;
pub mod error;
pub mod instances;
pub mod ldp;
pub mod linalg;
pub mod lqr;
pub mod oracle;
pub mod problem_file;
pub mod ssp;

pub use cone::{cone_norm, min_of_ordered_set, partial_order, ConeOrdering, ConeTag, ValueObject};
pub use engine::{
    fixed_point_solve, BlockProblem, ConvergenceTrace, FixedPoint, Schedule, SolveConfig,
};
pub use error::{Error, Result};
pub use ldp::{solve_ldp, LdpProblem, LdpSolution, ReducedLdp};
pub use lqr::{solve_lqr, LqrProblem, LqrSolution};
pub use problem_file::{Problem, ProblemFile};
pub use ssp::{solve_graph, solve_ssp, SspGraph, SspProblem, SspSolution};
