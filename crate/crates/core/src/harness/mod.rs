//! Experiment harness: configuration parsing, deterministic random draws,
//! CSV/dump diagnostics and the drivers the `nestfield` binary dispatches to.

pub mod config;
pub mod diagnostics;
pub mod experiments;
pub mod random;

pub use config::{Experiment, ExperimentConfig};
pub use diagnostics::{PhysicsRow, PropertyOutcome, TransportRow};
pub use experiments::{run, PhysicsReport, RunOutcome, TransportReport};
