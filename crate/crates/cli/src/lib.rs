//! Experiment runner for noisy deep ensembles: config handling, the `run`,
//! `sweep-noise`, `sweep-members` and `report` verbs, and their output files.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
