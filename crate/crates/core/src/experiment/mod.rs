//! Configured sweeps, theorem checks and measure reports, with their file formats.

pub mod config;
pub mod ingest;
pub mod output;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{load_config, ExperimentConfig, ExperimentKind};
pub use sweep::{run_sweep, ArmSummary, SweepRecord, TrialSpec};
