//! Core of the quantum network development kit.
//!
//! The crate is layered bottom-up:
//!
//! * [`quantum`] keeps pure-state trajectories of small entanglement groups.
//! * [`des`] is the deterministic event queue that owns simulated time.
//! * [`network`] turns node and fiber parameters into delays, loss and noise.
//! * [`framework`] runs protocol roles as cooperative tasks on the event queue.
//! * [`protocols`] holds the stock roles (BB84, Cascade, entanglement distribution).
//! * [`document`] is the portable simulation document, its compiler and the run driver.

pub mod des;
pub mod document;
pub mod framework;
pub mod network;
pub mod protocols;
pub mod quantum;
pub mod rng;

pub use document::{
    compile, export, import, run_plan, validate, BackendRegistry, CompiledPlan, RunOptions,
    RunReport, SimulationDocument, Toolkit,
};
pub use framework::{RoleRegistry, RoleResult, RoleStatus};

/// Crate version, reported by the service health endpoint.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
