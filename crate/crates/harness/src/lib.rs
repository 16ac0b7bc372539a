//! Experiment orchestration for the logistic data-selection laboratory: configuration,
//! the seeded end-to-end pipeline, and report emission.

pub mod config;
pub mod diagnostics;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, Regime};
pub use pipeline::{retrain_and_eval, run_pipeline, CellReport, RunReport};
pub use report::emit_reports;
