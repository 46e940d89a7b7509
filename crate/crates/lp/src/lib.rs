//! Convex stage subproblem solver.
//!
//! Problems are linear programs with optional separable quadratic terms
//! `½·w·(x − c)²`. Linear problems are solved with a dense bounded-variable
//! simplex method that keeps its basis between solves, so a sequence of
//! closely related problems (changed right-hand sides, costs, added rows)
//! can be re-optimized in a handful of pivots. Quadratic terms are handled
//! by outer approximation on top of the same engine.

mod error;
mod lpfile;
mod problem;
mod solver;
mod tableau;

pub use error::SolverError;
pub use lpfile::write_lp;
pub use problem::{ConvexSubproblem, QuadTerm, Row, Sense};
pub use solver::{solve, SubproblemSolution, WarmLp};

/// Primal feasibility tolerance reported to callers.
pub const PRIMAL_TOLERANCE: f64 = 1e-7;
/// Relative optimality gap tolerance reported to callers.
pub const GAP_TOLERANCE: f64 = 1e-6;
