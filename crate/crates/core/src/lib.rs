//! Targeted data selection along validation-induced warmup trajectories.
//!
//! The crate covers the full logistic-regression laboratory: synthetic mixture data,
//! the logistic model and its derivatives, gradient-descent trajectories, candidate
//! scoring rules (endpoint loss drop, trajectory-gradient matching, one-step
//! validation perturbation, base gradient, random), warmup calibration by held-out
//! AUROC, and diagnostics ranging from trajectory shape to a numerically checked
//! Wasserstein transfer bound.

pub mod analysis;
pub mod calibration;
pub mod dataset;
pub mod error;
pub mod instrument;
pub mod model;
pub mod rng;
pub mod selectors;
pub mod synthdata;
pub mod trainer;

pub use dataset::{ExampleRef, LabeledDataset, LabeledExample, Provenance, Source};
pub use error::{Error, Result};
pub use instrument::Counters;
pub use model::{ParamVector, RegularizedObjective, SmoothObjective};
pub use selectors::{ScoreTable, SelectionResult, SelectorKind, TacsVariant};
pub use trainer::{Decay, LrSchedule, Trajectory};
