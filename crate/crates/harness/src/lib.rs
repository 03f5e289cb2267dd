//! Experiment harness: configuration, seeded work units, persistence, report
//! tables and the variance study.

pub mod config;
pub mod method;
pub mod report;
pub mod runner;
pub mod seeds;
pub mod study;

pub use config::{preset, ConfigPatch, ExperimentConfig};
pub use method::{Family, Method};
pub use runner::{read_records, run_experiment, Manifest, Plan, RunOptions, RunSummary};
pub use study::{run_variance_study, variance_grids, StudyConfig};
