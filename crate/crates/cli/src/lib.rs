//! Experiment configuration, parameter-sequence validation, and the
//! convergence laboratory orchestrating thin-model and limit-model runs.

pub mod config;
pub mod selftest;
pub mod study;
pub mod validate;

pub use config::StudyConfig;
pub use study::{run_convergence_study, StudyOptions, StudyReport};
pub use validate::{validate_hypotheses, ValidationReport};
