//! Command-line runner for the approxfl simulator: versioned JSON
//! configuration, dataset files, experiment execution over seeds and the
//! CSV/JSON artifacts, plus analytical report tables.

pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod report;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{Result, RunnerError};
pub use experiment::{run_experiment, Prepared, RayonExecutor};
