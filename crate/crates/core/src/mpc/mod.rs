//! Closed-loop model predictive control: plans, leg controller, simulated
//! plant and the loop that ties them together.

pub mod ablation;
pub mod leg;
pub mod log;
pub mod plan;
pub mod plant;
pub mod runtime;

pub use plan::Plan;
pub use plant::{Disturbance, PlantState, SimulationDiverged};
pub use runtime::{run_closed_loop, MpcConfig, Planner, RunError, RunFailure, RunMode, SimConfig, SolverConfig};
