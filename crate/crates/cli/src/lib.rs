//! Configuration-driven experiment runner for the `phasefield` toolkit.

pub mod compare;
pub mod config;
pub mod error;
pub mod run;

pub use compare::{compare, CompareReport, FieldSets};
pub use config::{ExperimentConfig, ExperimentId, OUTPUT_ROOT_ENV};
pub use error::CliError;
pub use run::{run, run_file, RunOutcome};
