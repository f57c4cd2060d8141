//! Multi-phase constrained differential dynamic programming.
//!
//! Solves optimal control problems over hybrid systems with a known switching
//! sequence. Reset maps between phases are propagated through the backward
//! sweep, phase-terminal equality constraints are handled with an augmented
//! Lagrangian outer loop, and previous solutions (controls, states, feedback
//! gains and multipliers) can warm start a receding-horizon replan.

mod error;
mod problem;
mod solution;
mod solver;
mod sweep;

pub use error::SolverError;
pub use problem::{EqualityConstraint, Matrix, Problem, StageCost, TerminalCost, Vector};
pub use solution::{
    AlState, DdpSolution, IterationRecord, SolveStatus, SolverOptions, Trajectory,
};
pub use solver::{shifted_guess, solve, warm_start_replan, warm_start_rollout, InitialGuess};
pub use sweep::{backward_sweep, forward_sweep, rollout, BackwardPass, Update};
