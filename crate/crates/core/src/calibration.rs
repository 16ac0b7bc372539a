//! M-fold selection of the warmup learning rate and depth by held-out AUROC.
//!
//! For every rate and fold a single warmup is trained on the remaining folds up to the
//! largest depth; each depth in the grid is then evaluated from that one run by scoring
//! the held-out positives against a fixed negative reference sample.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::instrument::Counters;
use crate::model::{dot_row, margin_loss, ParamVector, RegularizedObjective};
use crate::rng;
use crate::selectors::TacsVariant;
use crate::trainer::{train_gd_with, Decay, LrSchedule};

/// Probability that a positive outscores a negative, ties counting one half.
///
/// Computed from midranks of the pooled sample:
/// `(Σ_pos rank − |pos|(|pos|+1)/2) / (|pos|·|neg|)`.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::config(
            "AUROC needs nonempty positive and negative lists",
        ));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::InvalidNumeric("NaN score in AUROC input".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Rank sums are kept doubled so midranks stay integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share the midrank (i+j+2)/2
        let twice_mid = (i + j + 2) as u128;
        let n_pos = all[i..=j].iter().filter(|(_, p)| *p).count() as u128;
        twice_rank_sum += twice_mid * n_pos;
        i = j + 1;
    }
    let np = pos.len() as u128;
    let nn = neg.len() as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

#[derive(Debug, Clone)]
pub struct CalibrationGrid {
    pub rates: Vec<f64>,
    pub depths: Vec<usize>,
    pub folds: usize,
    pub neg_sample: LabeledDataset,
    pub seed: u64,
}

/// Optimizer settings shared by calibration runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub decay: Decay,
    pub l2_coeff: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            decay: Decay::Linear,
            l2_coeff: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub rate: f64,
    pub depth: usize,
    pub fold_auroc: Vec<f64>,
    pub mean_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub cells: Vec<CalibrationCell>,
    pub chosen_rate: f64,
    pub chosen_depth: usize,
    pub chosen_mean_auroc: f64,
    pub folds: usize,
    pub seed: u64,
    pub val_digest: String,
    pub neg_digest: String,
    pub training_runs: u64,
}

impl CalibrationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl CalibrationGrid {
    fn validate(&self, val: &LabeledDataset) -> Result<()> {
        if self.rates.is_empty() || self.depths.is_empty() {
            return Err(Error::config("calibration grids must be nonempty"));
        }
        if self.rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::config("calibration rates must be positive"));
        }
        if self.depths.contains(&0) {
            return Err(Error::config("calibration depths must be ≥ 1"));
        }
        if self.folds < 2 {
            return Err(Error::config("calibration needs at least 2 folds"));
        }
        if self.folds > val.len() {
            return Err(Error::config(format!(
                "{} folds for a validation set of {}",
                self.folds,
                val.len()
            )));
        }
        if self.neg_sample.dim() != val.dim() {
            return Err(Error::config(
                "negative sample dimension differs from validation",
            ));
        }
        Ok(())
    }
}

/// Seeded shuffle of `0..n`, cut into `m` contiguous blocks.
pub fn fold_partition(n: usize, m: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, "calibration/folds"));
    (0..m)
        .map(|i| perm[i * n / m..(i + 1) * n / m].to_vec())
        .collect()
}

fn normalized_drop(base: &[f64], last: &[f64], data: &LabeledDataset, i: usize, eps: f64) -> f64 {
    let y = f64::from(data.labels()[i]);
    let before = margin_loss(y * dot_row(base, data.row(i)));
    let after = margin_loss(y * dot_row(last, data.row(i)));
    (before - after) / before.max(eps)
}

pub fn calibrate(
    val: &LabeledDataset,
    grid: &CalibrationGrid,
    trainer: &TrainerConfig,
) -> Result<CalibrationReport> {
    calibrate_with(val, grid, trainer, None)
}

pub fn calibrate_with(
    val: &LabeledDataset,
    grid: &CalibrationGrid,
    trainer: &TrainerConfig,
    counters: Option<&Counters>,
) -> Result<CalibrationReport> {
    grid.validate(val)?;
    let folds = fold_partition(val.len(), grid.folds, grid.seed);
    if let Some(i) = folds.iter().position(|f| f.is_empty()) {
        return Err(Error::config(format!("fold {i} has no positives")));
    }
    let max_depth = *grid.depths.iter().max().expect("nonempty");
    let eps = TacsVariant::default().epsilon;
    let theta0 = ParamVector::zeros(val.dim());
    let local = Counters::new();

    let mut cells: Vec<CalibrationCell> = Vec::new();
    for &rate in &grid.rates {
        let mut per_depth = vec![Vec::with_capacity(grid.folds); grid.depths.len()];
        for (i, held_out) in folds.iter().enumerate() {
            let warm_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let warm = val.subset(&warm_idx, "calibration.warmup")?;
            let positives = val.subset(held_out, "calibration.heldout")?;
            let objective = RegularizedObjective::new(&warm)?.with_l2(trainer.l2_coeff)?;
            let schedule = LrSchedule::new(rate, max_depth, trainer.decay)?;
            let traj = train_gd_with(&theta0, &objective, &schedule, grid.seed, Some(&local))?;
            let base = traj.checkpoint(1).as_slice();
            for (k, &depth) in grid.depths.iter().enumerate() {
                let last = traj.checkpoint(depth).as_slice();
                let pos: Vec<f64> = (0..positives.len())
                    .map(|j| normalized_drop(base, last, &positives, j, eps))
                    .collect();
                let neg: Vec<f64> = (0..grid.neg_sample.len())
                    .map(|j| normalized_drop(base, last, &grid.neg_sample, j, eps))
                    .collect();
                per_depth[k].push(auroc(&pos, &neg)?);
            }
        }
        for (k, &depth) in grid.depths.iter().enumerate() {
            let fold_auroc = std::mem::take(&mut per_depth[k]);
            let mean_auroc = fold_auroc.iter().sum::<f64>() / fold_auroc.len() as f64;
            cells.push(CalibrationCell {
                rate,
                depth,
                fold_auroc,
                mean_auroc,
            });
        }
    }

    // highest mean; ties go to the smaller rate, then the smaller depth
    let best = cells
        .iter()
        .max_by(|a, b| {
            a.mean_auroc
                .total_cmp(&b.mean_auroc)
                .then(b.rate.total_cmp(&a.rate))
                .then(b.depth.cmp(&a.depth))
        })
        .expect("nonempty grid");
    let (chosen_rate, chosen_depth, chosen_mean_auroc) = (best.rate, best.depth, best.mean_auroc);

    if let Some(c) = counters {
        c.add_gd_steps(local.gd_steps());
        for _ in 0..local.training_runs() {
            c.add_training_run();
        }
    }
    Ok(CalibrationReport {
        cells,
        chosen_rate,
        chosen_depth,
        chosen_mean_auroc,
        folds: grid.folds,
        seed: grid.seed,
        val_digest: val.content_digest(),
        neg_digest: grid.neg_sample.content_digest(),
        training_runs: local.training_runs(),
    })
}
