//! End-to-end experiment: data, calibrated validation warmup, pool warmup, scoring,
//! top-N selection, retraining, evaluation and diagnostics, for every configured seed.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tacs_core::analysis::{
    endpoint_basis, path_scores, selection_quality, shape_ratio, QualityReport, ShapeReport,
};
use tacs_core::calibration::{calibrate_with, CalibrationGrid, TrainerConfig};
use tacs_core::model::{dot_row, risk};
use tacs_core::selectors::{
    all_update_steps, base_grad_score, less_score, random_score, select_top_n, tacs_score_with,
    tov_scores,
};
use tacs_core::synthdata::{
    corrupt_labels, distractor_reference, gen_balanced_mixture, gen_rare_target, MixtureData,
};
use tacs_core::trainer::train_gd_with;
use tacs_core::{
    Counters, Error, LabeledDataset, LrSchedule, ParamVector, RegularizedObjective, Result,
    ScoreTable, SelectionResult, SelectorKind, TacsVariant, Trajectory,
};

use crate::config::{ExperimentConfig, Regime};
use crate::diagnostics::{spearman, top_k_overlap};

/// How retraining hyperparameters are picked; copied into every report.
pub const RETRAIN_RULE: &str = "each selector's subset is retrained from theta0 = 0 with \
     linearly decaying full-batch GD for every (base rate, steps) pair of the training grid \
     (and, for ToV, every perturbation multiplier); the run with the lowest validation risk \
     at its last step is evaluated, ties going to the smaller multiplier, rate, then steps";

/// Inputs shared by every cell of one seed.
#[derive(Debug, Clone)]
pub struct SeedInputs {
    pub data: MixtureData,
    pub neg_reference: LabeledDataset,
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedInputs> {
    let mcfg = cfg.mixture.with_seed(cfg.data_seed(seed));
    let mut data = match cfg.regime {
        Regime::Balanced => gen_balanced_mixture(&mcfg)?,
        Regime::RareTarget => gen_rare_target(&mcfg)?,
    };
    if cfg.label_noise > 0.0 {
        data.pool = corrupt_labels(&data.pool, cfg.label_noise, cfg.stage_seed("noise", seed))?;
    }
    let neg_reference = distractor_reference(
        &data,
        cfg.calibration.neg_size,
        cfg.stage_seed("neg_reference", seed),
    )?;
    Ok(SeedInputs {
        data,
        neg_reference,
    })
}

fn theta0(cfg: &ExperimentConfig) -> ParamVector {
    ParamVector::zeros(cfg.mixture.d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupSummary {
    pub rate: f64,
    pub steps: usize,
    pub score: f64,
}

/// Calibrated validation-induced trajectory and its calibration summary.
pub struct ValWarmup {
    pub traj: Trajectory,
    pub calibration: tacs_core::calibration::CalibrationReport,
}

pub fn val_warmup(
    cfg: &ExperimentConfig,
    seed: u64,
    inputs: &SeedInputs,
    counters: &Counters,
) -> Result<ValWarmup> {
    let grid = CalibrationGrid {
        rates: cfg.grids.warmup_rates(),
        depths: cfg.grids.steps.clone(),
        folds: cfg.calibration.folds,
        neg_sample: inputs.neg_reference.clone(),
        seed: cfg.stage_seed("calibration", seed),
    };
    let trainer = TrainerConfig::default();
    let calibration = calibrate_with(&inputs.data.val, &grid, &trainer, Some(counters))?;
    let schedule = LrSchedule::new(
        calibration.chosen_rate,
        calibration.chosen_depth,
        trainer.decay,
    )?;
    let objective = RegularizedObjective::new(&inputs.data.val)?;
    let traj = train_gd_with(
        &theta0(cfg),
        &objective,
        &schedule,
        grid.seed,
        Some(counters),
    )?;
    Ok(ValWarmup { traj, calibration })
}

fn val_risk(theta: &ParamVector, val: &LabeledDataset) -> Result<f64> {
    risk(theta, &RegularizedObjective::new(val)?)
}

/// Trains on the whole pool over the training grid and keeps the run whose endpoint has
/// the lowest validation risk (ties to the smaller rate, then fewer steps).
pub fn pool_warmup(
    cfg: &ExperimentConfig,
    seed: u64,
    inputs: &SeedInputs,
) -> Result<(Trajectory, WarmupSummary)> {
    let objective = RegularizedObjective::new(&inputs.data.pool)?;
    let mut best: Option<(Trajectory, WarmupSummary)> = None;
    for &rate in &cfg.grids.base_rates {
        for &steps in &cfg.grids.steps {
            let schedule = LrSchedule::linear(rate, steps)?;
            let traj = train_gd_with(
                &theta0(cfg),
                &objective,
                &schedule,
                cfg.stage_seed("pool_warmup", seed),
                None,
            )?;
            let score = val_risk(traj.last(), &inputs.data.val)?;
            if best.as_ref().is_none_or(|(_, b)| score < b.score) {
                best = Some((traj, WarmupSummary { rate, steps, score }));
            }
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// Misclassification rate of `sign(⟨x, θ⟩)` on `test`, with a zero margin predicting +1.
pub fn test_error(theta: &ParamVector, test: &LabeledDataset) -> f64 {
    let t = theta.as_slice();
    let wrong = (0..test.len())
        .filter(|&i| {
            let pred: i8 = if dot_row(t, test.row(i)) >= 0.0 {
                1
            } else {
                -1
            };
            pred != test.labels()[i]
        })
        .count();
    wrong as f64 / test.len() as f64
}

fn selected(selection: &SelectionResult, pool: &LabeledDataset) -> Result<LabeledDataset> {
    if selection.indices.is_empty() {
        return Err(Error::config("cannot retrain on an empty selection"));
    }
    pool.subset(&selection.indices, "selection")
}

/// Retrains from `theta0` on the selected examples and returns the target test error.
pub fn retrain_and_eval(
    selection: &SelectionResult,
    pool: &LabeledDataset,
    test: &LabeledDataset,
    theta0: &ParamVector,
    schedule: &LrSchedule,
) -> Result<f64> {
    let subset = selected(selection, pool)?;
    let traj = train_gd_with(
        theta0,
        &RegularizedObjective::new(&subset)?,
        schedule,
        0,
        None,
    )?;
    Ok(test_error(traj.last(), test))
}

/// Best retraining run over the training grid, chosen by validation risk.
pub struct Retrained {
    pub traj: Trajectory,
    pub rate: f64,
    pub steps: usize,
    pub val_risk: f64,
}

pub fn retrain_best(
    cfg: &ExperimentConfig,
    selection: &SelectionResult,
    inputs: &SeedInputs,
    seed: u64,
) -> Result<Retrained> {
    let subset = selected(selection, &inputs.data.pool)?;
    let objective = RegularizedObjective::new(&subset)?;
    let mut best: Option<Retrained> = None;
    for &rate in &cfg.grids.base_rates {
        for &steps in &cfg.grids.steps {
            let schedule = LrSchedule::linear(rate, steps)?;
            let traj = train_gd_with(&theta0(cfg), &objective, &schedule, seed, None)?;
            let vr = val_risk(traj.last(), &inputs.data.val)?;
            if best.as_ref().is_none_or(|b| vr < b.val_risk) {
                best = Some(Retrained {
                    traj,
                    rate,
                    steps,
                    val_risk: vr,
                });
            }
        }
    }
    Ok(best.expect("nonempty grid"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub retrain: (f64, f64),
    pub val: (f64, f64),
    pub pool: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub selector: SelectorKind,
    pub budget: usize,
    pub seed: u64,
    pub test_error: Option<f64>,
    pub quality: Option<QualityReport>,
    pub shape: Option<ShapeReport>,
    pub projection: Option<Projection>,
    pub retrain_rate: Option<f64>,
    pub retrain_steps: Option<usize>,
    pub val_risk: Option<f64>,
    pub tov_alpha: Option<f64>,
    /// Diagnostics that could not be computed while the cell itself succeeded.
    pub notes: Vec<String>,
    pub error: Option<String>,
}

impl CellReport {
    fn failed(selector: SelectorKind, budget: usize, seed: u64, err: &Error) -> Self {
        Self {
            selector,
            budget,
            seed,
            test_error: None,
            quality: None,
            shape: None,
            projection: None,
            retrain_rate: None,
            retrain_steps: None,
            val_risk: None,
            tov_alpha: None,
            notes: Vec::new(),
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantAgreement {
    /// `(variant a, variant b, spearman, top-k overlap)` for all pairs.
    pub pairs: Vec<(String, String, f64, f64)>,
    pub k: usize,
    pub min_spearman: f64,
    pub min_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub data_seed: u64,
    pub calibration: Option<WarmupSummary>,
    pub pool_warmup: Option<WarmupSummary>,
    /// GD steps spent on calibration plus the final validation warmup.
    pub warmup_gd_steps: u64,
    pub warmup_training_runs: u64,
    /// Additional warmup steps observed while scoring a second, unseen pool.
    pub second_pool_extra_gd_steps: Option<u64>,
    pub variant_agreement: Option<VariantAgreement>,
    /// Mean |Γ| between pool- and validation-induced paths over target-source candidates.
    pub mean_attribution_gap: Option<f64>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub selector: SelectorKind,
    pub budget: usize,
    pub seed: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub regime: Regime,
    pub config_digest: String,
    pub retrain_rule: String,
    pub cells: Vec<CellReport>,
    pub seeds: Vec<SeedReport>,
    /// Wall-clock timing; kept out of the serialized report so that reruns compare
    /// byte-for-byte.
    #[serde(skip)]
    pub timing: Vec<CellTiming>,
}

fn score_table(
    kind: SelectorKind,
    cfg: &ExperimentConfig,
    seed: u64,
    inputs: &SeedInputs,
    warm: Option<&ValWarmup>,
    pool_traj: Option<&Trajectory>,
    counters: &Counters,
) -> Result<Vec<(Option<f64>, ScoreTable)>> {
    let pool = &inputs.data.pool;
    let val = &inputs.data.val;
    let need = |what: &str| Error::Precondition(format!("{kind} scoring needs the {what}"));
    Ok(match kind {
        SelectorKind::Tacs => {
            let w = warm.ok_or_else(|| need("validation warmup"))?;
            vec![(
                None,
                tacs_score_with(&w.traj, pool, &cfg.tacs, Some(counters))?,
            )]
        }
        SelectorKind::Less => {
            let p = pool_traj.ok_or_else(|| need("pool warmup"))?;
            vec![(None, less_score(p, val, pool, &all_update_steps(p))?)]
        }
        SelectorKind::Tov => {
            let p = pool_traj.ok_or_else(|| need("pool warmup"))?;
            let ks = all_update_steps(p);
            let tables = tov_scores(p, val, pool, &cfg.grids.tov_alphas, &ks)?;
            cfg.grids
                .tov_alphas
                .iter()
                .map(|&a| Some(a))
                .zip(tables)
                .collect()
        }
        SelectorKind::BaseGrad => vec![(None, base_grad_score(&theta0(cfg), val, pool)?)],
        SelectorKind::Random => vec![(
            None,
            random_score(pool.len(), cfg.stage_seed("random_score", seed))?,
        )],
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cell(
    cfg: &ExperimentConfig,
    kind: SelectorKind,
    budget: usize,
    seed: u64,
    inputs: &SeedInputs,
    tables: &[(Option<f64>, ScoreTable)],
    warm: Option<&ValWarmup>,
    pool_traj: Option<&Trajectory>,
) -> Result<CellReport> {
    let cell_seed = cfg.cell_seed(kind, budget, seed);
    let mut best: Option<(Option<f64>, SelectionResult, Retrained)> = None;
    for (alpha, table) in tables {
        let selection = select_top_n(table, budget)?;
        let r = retrain_best(cfg, &selection, inputs, cell_seed)?;
        if best
            .as_ref()
            .is_none_or(|(_, _, b)| r.val_risk < b.val_risk)
        {
            best = Some((*alpha, selection, r));
        }
    }
    let (alpha, selection, r) = best.ok_or_else(|| Error::config("no score table"))?;
    let quality = selection_quality(&selection, &inputs.data.pool)?;
    let mut notes = Vec::new();
    let (shape, projection) = match (warm, pool_traj) {
        (Some(w), Some(p)) => {
            let shape = shape_ratio(&r.traj, &w.traj, p)
                .map_err(|e| notes.push(format!("shape: {e}")))
                .ok();
            let projection = endpoint_basis(&r.traj, &w.traj)
                .and_then(|b| {
                    Ok(Projection {
                        retrain: b.project_direction(&r.traj)?,
                        val: b.project_direction(&w.traj)?,
                        pool: b.project_direction(p)?,
                    })
                })
                .map_err(|e| notes.push(format!("projection: {e}")))
                .ok();
            (shape, projection)
        }
        _ => (None, None),
    };
    Ok(CellReport {
        selector: kind,
        budget,
        seed,
        test_error: Some(test_error(r.traj.last(), &inputs.data.test)),
        quality: Some(quality),
        shape,
        projection,
        retrain_rate: Some(r.rate),
        retrain_steps: Some(r.steps),
        val_risk: Some(r.val_risk),
        tov_alpha: alpha,
        notes,
        error: None,
    })
}

fn variant_agreement(
    traj: &Trajectory,
    pool: &LabeledDataset,
    k: usize,
) -> Result<VariantAgreement> {
    let k = k.min(pool.len());
    let tables = TacsVariant::all()
        .iter()
        .map(|v| {
            let t = tacs_core::selectors::tacs_score(traj, pool, v)?;
            let top = select_top_n(&t, k)?.indices;
            Ok((v.to_string(), t.scores, top))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for i in 0..tables.len() {
        for j in i + 1..tables.len() {
            let rho = spearman(&tables[i].1, &tables[j].1);
            let ov = top_k_overlap(&tables[i].2, &tables[j].2);
            pairs.push((tables[i].0.clone(), tables[j].0.clone(), rho, ov));
        }
    }
    let min_spearman = pairs.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let min_overlap = pairs.iter().map(|p| p.3).fold(f64::INFINITY, f64::min);
    Ok(VariantAgreement {
        pairs,
        k,
        min_spearman,
        min_overlap,
    })
}

fn mean_gap(
    pool_traj: &Trajectory,
    val_traj: &Trajectory,
    inputs: &SeedInputs,
    n: usize,
) -> Result<Option<f64>> {
    let pool = &inputs.data.pool;
    let target = RegularizedObjective::new(&inputs.data.val)?;
    let idx: Vec<usize> = (0..pool.len())
        .filter(|&i| pool.sources()[i].is_target())
        .take(n)
        .collect();
    if idx.is_empty() {
        return Ok(None);
    }
    let a = path_scores(pool_traj, idx.iter().map(|&i| pool.example(i)), &target)?;
    let b = path_scores(val_traj, idx.iter().map(|&i| pool.example(i)), &target)?;
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(Some(total / idx.len() as f64))
}

/// Scores a freshly generated pool with an existing warmup and reports how many extra
/// warmup GD steps that cost (expected: none).
fn second_pool_audit(
    cfg: &ExperimentConfig,
    seed: u64,
    warm: &ValWarmup,
    counters: &Counters,
) -> Result<u64> {
    let mut spec = cfg.mixture.clone();
    spec.pool_size = cfg.diagnostics.second_pool_size;
    let mcfg = spec.with_seed(cfg.stage_seed("second_pool", seed));
    let data = match cfg.regime {
        Regime::Balanced => gen_balanced_mixture(&mcfg)?,
        Regime::RareTarget => gen_rare_target(&mcfg)?,
    };
    let before = counters.gd_steps();
    tacs_score_with(&warm.traj, &data.pool, &cfg.tacs, Some(counters))?;
    Ok(counters.gd_steps() - before)
}

fn err_string(stage: &str, e: &Error) -> String {
    format!("{stage}: {e}")
}

/// Everything for one seed: cells in (selector, budget) order plus seed diagnostics.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
) -> (Vec<CellReport>, Vec<CellTiming>, SeedReport) {
    let mut report = SeedReport {
        seed,
        data_seed: cfg.data_seed(seed),
        calibration: None,
        pool_warmup: None,
        warmup_gd_steps: 0,
        warmup_training_runs: 0,
        second_pool_extra_gd_steps: None,
        variant_agreement: None,
        mean_attribution_gap: None,
        errors: Vec::new(),
    };
    let all_failed = |e: &Error| {
        let cells = cfg
            .selectors
            .iter()
            .flat_map(|&k| {
                cfg.budgets
                    .iter()
                    .map(move |&b| CellReport::failed(k, b, seed, e))
            })
            .collect();
        (cells, Vec::new())
    };
    let inputs = match prepare_seed(cfg, seed) {
        Ok(i) => i,
        Err(e) => {
            report.errors.push(err_string("data", &e));
            let (cells, timing) = all_failed(&e);
            return (cells, timing, report);
        }
    };

    let counters = Counters::new();
    let warm = val_warmup(cfg, seed, &inputs, &counters);
    report.warmup_gd_steps = counters.gd_steps();
    report.warmup_training_runs = counters.training_runs();
    let warm = match warm {
        Ok(w) => {
            report.calibration = Some(WarmupSummary {
                rate: w.calibration.chosen_rate,
                steps: w.calibration.chosen_depth,
                score: w.calibration.chosen_mean_auroc,
            });
            Some(w)
        }
        Err(e) => {
            report.errors.push(err_string("validation warmup", &e));
            None
        }
    };
    let pool_traj = match pool_warmup(cfg, seed, &inputs) {
        Ok((t, s)) => {
            report.pool_warmup = Some(s);
            Some(t)
        }
        Err(e) => {
            report.errors.push(err_string("pool warmup", &e));
            None
        }
    };

    let mut cells = Vec::new();
    let mut timing = Vec::new();
    for &kind in &cfg.selectors {
        let started = Instant::now();
        let tables = score_table(
            kind,
            cfg,
            seed,
            &inputs,
            warm.as_ref(),
            pool_traj.as_ref(),
            &counters,
        );
        let score_secs = started.elapsed().as_secs_f64();
        let results: Vec<(CellReport, f64)> = cfg
            .budgets
            .par_iter()
            .map(|&budget| {
                let started = Instant::now();
                let cell = match &tables {
                    Ok(t) => evaluate_cell(
                        cfg,
                        kind,
                        budget,
                        seed,
                        &inputs,
                        t,
                        warm.as_ref(),
                        pool_traj.as_ref(),
                    )
                    .unwrap_or_else(|e| CellReport::failed(kind, budget, seed, &e)),
                    Err(e) => CellReport::failed(kind, budget, seed, e),
                };
                (cell, started.elapsed().as_secs_f64())
            })
            .collect();
        for (cell, secs) in results {
            timing.push(CellTiming {
                selector: kind,
                budget: cell.budget,
                seed,
                seconds: secs + score_secs,
            });
            cells.push(cell);
        }
    }

    if let Some(w) = &warm {
        if cfg.diagnostics.second_pool_size > 0 {
            match second_pool_audit(cfg, seed, w, &counters) {
                Ok(extra) => report.second_pool_extra_gd_steps = Some(extra),
                Err(e) => report.errors.push(err_string("second pool", &e)),
            }
        }
        if cfg.diagnostics.variant_agreement {
            match variant_agreement(&w.traj, &inputs.data.pool, cfg.diagnostics.overlap_k) {
                Ok(a) => report.variant_agreement = Some(a),
                Err(e) => report.errors.push(err_string("variant agreement", &e)),
            }
        }
        if let Some(p) = &pool_traj {
            if cfg.diagnostics.attribution_candidates > 0 {
                match mean_gap(p, &w.traj, &inputs, cfg.diagnostics.attribution_candidates) {
                    Ok(g) => report.mean_attribution_gap = g,
                    Err(e) => report.errors.push(err_string("attribution gap", &e)),
                }
            }
        }
    }
    (cells, timing, report)
}

/// Runs every seed of `cfg` (in parallel on the current rayon pool) and assembles the
/// report in configuration order.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let per_seed: Vec<_> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect();
    let mut report = RunReport {
        regime: cfg.regime,
        config_digest: cfg.digest(),
        retrain_rule: RETRAIN_RULE.to_string(),
        cells: Vec::new(),
        seeds: Vec::new(),
        timing: Vec::new(),
    };
    for (cells, timing, seed) in per_seed {
        report.cells.extend(cells);
        report.timing.extend(timing);
        report.seeds.push(seed);
    }
    Ok(report)
}
