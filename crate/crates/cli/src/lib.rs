//! Command-line front end: TOML run configuration, experiment drivers that
//! write CSV and JSON artifacts, and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use acceptance::{run_acceptance, Outcome};
pub use config::{emit_config, parse_config, RunConfig};
pub use error::CliError;
pub use experiments::{run_experiment, Summary};
pub use output::OutputDir;
