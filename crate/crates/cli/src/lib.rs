//! Command-line front end for the energy-harvesting slotted ALOHA simulator.

pub mod args;
pub mod config;
pub mod grid;
pub mod run;

pub use config::{Command, ConfigError, ExperimentConfig, OutputFormat};
pub use run::{run, RunError, RunOutcome};
