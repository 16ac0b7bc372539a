#![allow(dead_code)]

use tacs_harness::config::{DiagnosticsSpec, MixtureSpec};
use tacs_harness::ExperimentConfig;

/// A balanced-regime configuration small enough to run in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::balanced();
    cfg.seeds = vec![0, 1];
    cfg.budgets = vec![64, 256];
    cfg.mixture = MixtureSpec {
        pool_size: 2_000,
        val_size: 60,
        test_size: 500,
        ..cfg.mixture
    };
    cfg.grids.base_rates = vec![0.5];
    cfg.grids.multipliers = vec![1.0, 2.0];
    cfg.grids.steps = vec![20, 40];
    cfg.diagnostics = DiagnosticsSpec {
        overlap_k: 100,
        attribution_candidates: 16,
        second_pool_size: 500,
        ..DiagnosticsSpec::default()
    };
    cfg
}
