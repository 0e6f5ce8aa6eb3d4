#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Greedy descent over finite action sets, clipped dual subgradient methods
//! and discrete queues used as approximate Lagrange multipliers.
//!
//! The feasible region of every problem is the convex hull `C = conv(D)` of a
//! finite action set `D`. Solvers only ever pick points of `D`; running
//! averages of those picks converge to (near-)optimal points of `C`.

pub mod descent;
pub mod dual;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod queue;
pub mod trace;

pub use error::{Error, Result};
pub use problem::{
    diameter, diameter_with, lagrangian_curvature, max_constraint_magnitude, ActionSet,
    ConstraintVector, ConstructionOptions, ConvexFunctionSpec, DiameterConvention,
    HullCertificate, ProblemInstance,
};
pub use dual::{run_constrained, LagrangianMinimizer, MultiplierSource, PrimalUpdate, SolverParams, WindowStart};
pub use oracle::{reference_dual, reference_primal, OracleOptions, ReferenceSolution};
pub use trace::{RunTrace, TraceRow};
