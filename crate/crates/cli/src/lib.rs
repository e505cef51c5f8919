//! Experiment runner behind the `wgflow` binary.
//!
//! [`config`] resolves the flat key/value configuration, [`experiments`] runs one seed
//! of each experiment family, [`runner`] handles seed loops, outputs and sweeps, and
//! [`log`] owns the `run.csv` format.

pub mod config;
pub mod experiments;
pub mod log;
pub mod runner;

pub use config::RunConfig;
pub use experiments::Interrupted;
pub use runner::{run_experiment, run_sweep, Summary};
