//! Candidate scoring rules and budgeted top-N selection.
//!
//! Every table follows the same convention: one finite score per pool row, larger is
//! better.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::instrument::Counters;
use crate::model::{dot_row, grad_risk, margin_loss, sigmoid, ParamVector, RegularizedObjective};
use crate::rng;
use crate::trainer::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Tacs,
    Less,
    Tov,
    BaseGrad,
    Random,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 5] = [
        SelectorKind::Tacs,
        SelectorKind::Less,
        SelectorKind::Tov,
        SelectorKind::BaseGrad,
        SelectorKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::Tacs => "tacs",
            SelectorKind::Less => "less",
            SelectorKind::Tov => "tov",
            SelectorKind::BaseGrad => "base_grad",
            SelectorKind::Random => "random",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown selector {s:?}")))
    }
}

/// Endpoint loss-drop score options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TacsVariant {
    pub normalized: bool,
    pub baseline_index: usize,
    pub epsilon: f64,
}

impl Default for TacsVariant {
    fn default() -> Self {
        Self {
            normalized: true,
            baseline_index: 1,
            epsilon: 1e-8,
        }
    }
}

impl TacsVariant {
    /// The four ablation variants: raw/normalized × baseline θ_0/θ_1.
    pub fn all() -> [TacsVariant; 4] {
        let v = |normalized, baseline_index| TacsVariant {
            normalized,
            baseline_index,
            ..TacsVariant::default()
        };
        [v(false, 0), v(true, 0), v(false, 1), v(true, 1)]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("TACS epsilon must be positive"));
        }
        if self.baseline_index > 1 {
            return Err(Error::config("TACS baseline index must be 0 or 1"));
        }
        Ok(())
    }
}

impl fmt::Display for TacsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = if self.normalized { "norm" } else { "raw" };
        write!(f, "{kind}{}", self.baseline_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: Vec<f64>,
    pub selector: SelectorKind,
    pub variant: Option<TacsVariant>,
    pub provenance: String,
}

impl ScoreTable {
    fn new(
        scores: Vec<f64>,
        selector: SelectorKind,
        variant: Option<TacsVariant>,
        provenance: String,
    ) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidNumeric(format!(
                "{selector} score for candidate {i} is {}",
                scores[i]
            )));
        }
        Ok(Self {
            scores,
            selector,
            variant,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn variant_label(&self) -> String {
        self.variant
            .map(|v| v.to_string())
            .unwrap_or_else(|| "-".into())
    }

    /// CSV with columns `index,score,selector,variant,trajectory_digest`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,score,selector,variant,trajectory_digest\n");
        let variant = self.variant_label();
        for (i, s) in self.scores.iter().enumerate() {
            out.push_str(&format!(
                "{i},{s:.16e},{},{variant},{}\n",
                self.selector, self.provenance
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("index,score,selector,variant,trajectory_digest") {
            return Err(Error::format("score table", "missing header"));
        }
        let mut scores = Vec::new();
        let mut selector = None;
        let mut variant_text = None;
        let mut provenance = None;
        for (n, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = |m: &str| Error::format("score table", format!("row {n}: {m}"));
            if cols.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            if cols[0].parse::<usize>().ok() != Some(n) {
                return Err(bad("indices must be 0..n in order"));
            }
            scores.push(cols[1].parse::<f64>().map_err(|_| bad("bad score"))?);
            selector.get_or_insert(cols[2].parse::<SelectorKind>()?);
            variant_text.get_or_insert(cols[3].to_string());
            provenance.get_or_insert(cols[4].to_string());
        }
        let selector = selector.ok_or_else(|| Error::format("score table", "no rows"))?;
        let variant = match variant_text.as_deref() {
            None | Some("-") => None,
            Some(v) => Some(parse_variant(v)?),
        };
        Self::new(scores, selector, variant, provenance.unwrap_or_default())
    }
}

fn parse_variant(s: &str) -> Result<TacsVariant> {
    let (normalized, rest) = if let Some(r) = s.strip_prefix("norm") {
        (true, r)
    } else if let Some(r) = s.strip_prefix("raw") {
        (false, r)
    } else {
        return Err(Error::format("score table", format!("bad variant {s:?}")));
    };
    let baseline_index = rest
        .parse()
        .map_err(|_| Error::format("score table", format!("bad variant {s:?}")))?;
    Ok(TacsVariant {
        normalized,
        baseline_index,
        ..TacsVariant::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub budget: usize,
    pub selector: SelectorKind,
    pub table_digest: String,
}

impl SelectionResult {
    /// One index per line after a `# selector=… budget=… digest=…` header.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# selector={} budget={} digest={}\nindex\n",
            self.selector, self.budget, self.table_digest
        );
        for i in &self.indices {
            out.push_str(&format!("{i}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# "))
            .ok_or_else(|| Error::format("selection", "missing header"))?;
        let mut selector = None;
        let mut budget = None;
        let mut digest = None;
        for kv in header.split_whitespace() {
            match kv.split_once('=') {
                Some(("selector", v)) => selector = Some(v.parse::<SelectorKind>()?),
                Some(("budget", v)) => budget = v.parse::<usize>().ok(),
                Some(("digest", v)) => digest = Some(v.to_string()),
                _ => {
                    return Err(Error::format(
                        "selection",
                        format!("bad header field {kv:?}"),
                    ))
                }
            }
        }
        if lines.next() != Some("index") {
            return Err(Error::format("selection", "missing column header"));
        }
        let indices = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<usize>()
                    .map_err(|_| Error::format("selection", format!("bad index {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let budget = budget.ok_or_else(|| Error::format("selection", "missing budget"))?;
        if indices.len() != budget {
            return Err(Error::format(
                "selection",
                "index count differs from budget",
            ));
        }
        Ok(Self {
            indices,
            budget,
            selector: selector.ok_or_else(|| Error::format("selection", "missing selector"))?,
            table_digest: digest.unwrap_or_default(),
        })
    }
}

fn check_dims(theta_dim: usize, data: &LabeledDataset) -> Result<()> {
    if theta_dim != data.dim() {
        return Err(Error::config(format!(
            "trajectory dimension {theta_dim} does not match data dimension {}",
            data.dim()
        )));
    }
    Ok(())
}

#[inline]
fn row_loss(theta: &[f64], data: &LabeledDataset, i: usize) -> f64 {
    margin_loss(f64::from(data.labels()[i]) * dot_row(theta, data.row(i)))
}

/// Endpoint loss drop along a reference trajectory.
///
/// With `a` the variant's baseline index the raw score is `ℓ(θ_a; z) − ℓ(θ_T; z)`; the
/// normalized score divides it by `max{ℓ(θ_a; z), ε}`. Only the two endpoint
/// checkpoints are touched.
pub fn tacs_score(
    traj_val: &Trajectory,
    pool: &LabeledDataset,
    variant: &TacsVariant,
) -> Result<ScoreTable> {
    tacs_score_with(traj_val, pool, variant, None)
}

pub fn tacs_score_with(
    traj_val: &Trajectory,
    pool: &LabeledDataset,
    variant: &TacsVariant,
    counters: Option<&Counters>,
) -> Result<ScoreTable> {
    variant.validate()?;
    if traj_val.checkpoints().len() < variant.baseline_index + 1 {
        return Err(Error::config(format!(
            "trajectory with {} checkpoints has no baseline θ_{}",
            traj_val.checkpoints().len(),
            variant.baseline_index
        )));
    }
    check_dims(traj_val.dim(), pool)?;
    let base = traj_val.checkpoint(variant.baseline_index).as_slice();
    let last = traj_val.last().as_slice();
    let scores = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let before = row_loss(base, pool, i);
            let after = row_loss(last, pool, i);
            let drop = before - after;
            if variant.normalized {
                drop / before.max(variant.epsilon)
            } else {
                drop
            }
        })
        .collect();
    if let Some(c) = counters {
        c.add_loss_evals(2 * pool.len() as u64);
    }
    ScoreTable::new(
        scores,
        SelectorKind::Tacs,
        Some(*variant),
        traj_val.digest(),
    )
}

fn check_checkpoints(traj: &Trajectory, checkpoints: &[usize], need_rate: bool) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::config("checkpoint set must be nonempty"));
    }
    let limit = if need_rate {
        traj.steps()
    } else {
        traj.steps() + 1
    };
    if let Some(&t) = checkpoints.iter().find(|&&t| t >= limit) {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: limit,
        });
    }
    Ok(())
}

/// Checkpoints `0..T`, i.e. every recorded step at which an update was taken.
pub fn all_update_steps(traj: &Trajectory) -> Vec<usize> {
    (0..traj.steps()).collect()
}

/// Mean over the checkpoint set of `⟨∇ℓ(θ_t; z), ∇R_val(θ_t)⟩` at pool-trajectory
/// checkpoints.
pub fn less_score(
    traj_pool: &Trajectory,
    val: &LabeledDataset,
    pool: &LabeledDataset,
    checkpoints: &[usize],
) -> Result<ScoreTable> {
    check_checkpoints(traj_pool, checkpoints, false)?;
    check_dims(traj_pool.dim(), val)?;
    check_dims(traj_pool.dim(), pool)?;
    let val_obj = RegularizedObjective::new(val)?;
    let val_grads = checkpoints
        .iter()
        .map(|&t| grad_risk(traj_pool.checkpoint(t), &val_obj))
        .collect::<Result<Vec<_>>>()?;
    let k = checkpoints.len() as f64;
    let scores = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let x = pool.row(i);
            let y = f64::from(pool.labels()[i]);
            let mut total = 0.0;
            for (&t, g) in checkpoints.iter().zip(&val_grads) {
                let m = y * dot_row(traj_pool.checkpoint(t).as_slice(), x);
                // ∇ℓ = −y σ(−m) x
                total += -y * sigmoid(-m) * dot_row(g.as_slice(), x);
            }
            total / k
        })
        .collect();
    ScoreTable::new(
        scores,
        SelectorKind::Less,
        None,
        format!("{}+{}", traj_pool.digest(), val.content_digest()),
    )
}

/// Mean candidate-loss improvement after one validation step of size `α·η_t` from
/// each pool checkpoint.
pub fn tov_score(
    traj_pool: &Trajectory,
    val: &LabeledDataset,
    pool: &LabeledDataset,
    alpha: f64,
    checkpoints: &[usize],
) -> Result<ScoreTable> {
    let mut tables = tov_scores(traj_pool, val, pool, &[alpha], checkpoints)?;
    Ok(tables.pop().expect("one multiplier"))
}

/// [`tov_score`] for several multipliers at once; the unperturbed losses and the
/// validation gradients are shared across multipliers.
pub fn tov_scores(
    traj_pool: &Trajectory,
    val: &LabeledDataset,
    pool: &LabeledDataset,
    alphas: &[f64],
    checkpoints: &[usize],
) -> Result<Vec<ScoreTable>> {
    if alphas.is_empty() {
        return Err(Error::config("ToV needs at least one multiplier"));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::config(format!("ToV multiplier {a} must be ≥ 0")));
    }
    check_checkpoints(traj_pool, checkpoints, true)?;
    check_dims(traj_pool.dim(), val)?;
    check_dims(traj_pool.dim(), pool)?;
    let val_obj = RegularizedObjective::new(val)?;
    // per checkpoint: base parameters and the step direction η_t·∇R_val(θ_t)
    let steps = checkpoints
        .iter()
        .map(|&t| {
            let base = traj_pool.checkpoint(t);
            let g = grad_risk(base, &val_obj)? * traj_pool.rates()[t];
            Ok((base.clone(), g))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = checkpoints.len() as f64;
    let na = alphas.len();
    let rows: Vec<Vec<f64>> = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let x = pool.row(i);
            let y = f64::from(pool.labels()[i]);
            let mut totals = vec![0.0; na];
            for (base, step) in &steps {
                let m = y * dot_row(base.as_slice(), x);
                let dm = y * dot_row(step.as_slice(), x);
                let before = margin_loss(m);
                for (total, &a) in totals.iter_mut().zip(alphas) {
                    // the perturbed parameters are θ_t − α·η_t·∇R_val(θ_t)
                    *total += before - margin_loss(m - a * dm);
                }
            }
            totals.iter().map(|t| t / k).collect()
        })
        .collect();
    alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| {
            ScoreTable::new(
                rows.iter().map(|r| r[j]).collect(),
                SelectorKind::Tov,
                None,
                format!(
                    "{}+{}+alpha={alpha}",
                    traj_pool.digest(),
                    val.content_digest()
                ),
            )
        })
        .collect()
}

/// First-order score at the base parameters: `⟨∇R_val(θ_0), ∇ℓ(θ_0; z)⟩`.
pub fn base_grad_score(
    theta0: &ParamVector,
    val: &LabeledDataset,
    pool: &LabeledDataset,
) -> Result<ScoreTable> {
    check_dims(theta0.len(), val)?;
    check_dims(theta0.len(), pool)?;
    let g = grad_risk(theta0, &RegularizedObjective::new(val)?)?;
    let t = theta0.as_slice();
    let scores = (0..pool.len())
        .into_par_iter()
        .map(|i| {
            let x = pool.row(i);
            let y = f64::from(pool.labels()[i]);
            -y * sigmoid(-y * dot_row(t, x)) * dot_row(g.as_slice(), x)
        })
        .collect();
    ScoreTable::new(
        scores,
        SelectorKind::BaseGrad,
        None,
        format!(
            "theta0={}+{}",
            crate::rng::digest_f64s(theta0.iter()),
            val.content_digest()
        ),
    )
}

/// Independent uniform(0, 1) scores.
pub fn random_score(pool_size: usize, seed: u64) -> Result<ScoreTable> {
    if pool_size == 0 {
        return Err(Error::config("random scores need pool_size ≥ 1"));
    }
    let mut r = rng::stream(seed, "random_score");
    let scores = (0..pool_size).map(|_| r.random::<f64>()).collect();
    ScoreTable::new(scores, SelectorKind::Random, None, format!("seed={seed}"))
}

/// The `n` highest-scoring indices, ties going to the smaller index, returned in
/// increasing index order.
pub fn select_top_n(table: &ScoreTable, n: usize) -> Result<SelectionResult> {
    if n == 0 || n > table.len() {
        return Err(Error::config(format!(
            "budget {n} outside [1, {}]",
            table.len()
        )));
    }
    let s = &table.scores;
    let mut order: Vec<usize> = (0..s.len()).collect();
    let cmp = |a: &usize, b: &usize| s[*b].total_cmp(&s[*a]).then(a.cmp(b));
    if n < order.len() {
        order.select_nth_unstable_by(n - 1, cmp);
        order.truncate(n);
    }
    order.sort_unstable();
    Ok(SelectionResult {
        indices: order,
        budget: n,
        selector: table.selector,
        table_digest: crate::rng::digest_f64s(table.scores.iter()),
    })
}
