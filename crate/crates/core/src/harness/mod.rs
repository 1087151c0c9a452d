//! Experiment harness: JSON configs, seeded multi-trial runs, CSV reports and
//! the shipped presets.

pub mod config;
pub mod presets;
pub mod report;
pub mod run;
pub mod stats;

pub use config::{DataSpec, ExperimentConfig, MethodSpec};
pub use presets::{preset, preset_names};
pub use report::{write_report, Report, Row};
pub use run::{run_experiment, run_trial, TrialFailure};
pub use stats::{paired_t_test, PairedTTest};
