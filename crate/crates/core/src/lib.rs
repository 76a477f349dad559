//! Minimum-cost free material optimization by primal-dual subgradient
//! (dual averaging) steps on a saddle-point reformulation.

// NaN-rejecting comparisons and index loops over coupled arrays are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod fem2d;
pub mod format;
pub mod model;
pub mod penalty;
pub mod proj;
pub mod saddle;

pub use error::{FmoError, Result};
pub use model::{
    apply_a, apply_a_with, feasible_e, quad_a, BlockViolation, DualState, Element,
    FeasibilityReport, FlopCounter, FlopSnapshot, LocalOperator, MaterialState, ProblemInstance,
    Reduction, SymBlock,
};
pub use saddle::{
    averaged_primal, da_step, starting_point, DualAccumulators, IterationRecord, Mode, Scheme,
    SigmaController, Solver, SolverConfig, StepSchedule,
};
