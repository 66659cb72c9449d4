//! Experiment driver: config files, the experiment loop with mid-run
//! architecture swaps, report emission, and the CLI.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod report;

pub use config::{load_config, parse_config, Architecture, ExperimentConfig, ModelSchedule};
pub use experiment::{run_experiment, run_experiment_with_mode, ExperimentOutput};
pub use report::{emit_report, load_metrics_rows, write_metrics_csv};
