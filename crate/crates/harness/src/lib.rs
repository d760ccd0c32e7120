//! Experiment orchestration for the traversability simulator: the simulation
//! loop, builtin benchmark worlds, evaluation, artifacts, and one runner per
//! CLI mode.

pub mod config;
pub mod error;
pub mod eval;
pub mod output;
pub mod runs;
pub mod serve;
pub mod sim;
pub mod worlds;

pub use config::{ExperimentConfig, RunMode};
pub use error::{HarnessError, Result};
