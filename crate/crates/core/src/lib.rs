pub mod cost;
pub mod dynamics;
pub mod gait;
pub mod mpc;
pub mod problem;
pub mod reference;
pub mod robot;
pub mod rotation;
pub mod scenario;
pub mod stats;
