//! Convex solver stack: Hermitian block algebra, a dense barrier
//! interior-point engine, and a linear complex-SDP facade on top of it.

pub mod hermitian;
pub mod ipm;
pub mod sdp;

pub use ipm::{
    find_interior, is_strictly_feasible, solve, ConicProblem, ExpCone, LinExpr, ProblemBuilder,
    Solution, SolveError, SolverOptions,
};
pub use sdp::{solve_complex_sdp, SdpConstraint, SdpProblem, SdpSolution};
