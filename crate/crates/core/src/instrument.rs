//! Operation counters used to audit cost claims (warmup reuse, two-checkpoint scoring,
//! one training run per calibration cell).

use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Default)]
pub struct Counters {
    gd_steps: AtomicU64,
    training_runs: AtomicU64,
    loss_evals: AtomicU64,
}

impl Counters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn gd_steps(&self) -> u64 {
        self.gd_steps.load(Ordering::Relaxed)
    }

    pub fn training_runs(&self) -> u64 {
        self.training_runs.load(Ordering::Relaxed)
    }

    pub fn loss_evals(&self) -> u64 {
        self.loss_evals.load(Ordering::Relaxed)
    }

    pub(crate) fn add_gd_steps(&self, n: u64) {
        self.gd_steps.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_training_run(&self) {
        self.training_runs.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn add_loss_evals(&self, n: u64) {
        self.loss_evals.fetch_add(n, Ordering::Relaxed);
    }
}
