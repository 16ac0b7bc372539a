//! Experiment configuration: a TOML document with dotted sections. Unknown keys are
//! rejected so that a typo never silently falls back to a default.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tacs_core::rng::{derive_seed, digest_bytes};
use tacs_core::synthdata::MixtureConfig;
use tacs_core::{Error, Result, SelectorKind, TacsVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Balanced,
    RareTarget,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Balanced => "balanced",
            Regime::RareTarget => "rare_target",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mixture parameters without the seed; each experiment seed gets its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub d: usize,
    pub pool_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub target_mass: f64,
    pub n_distractors: usize,
    pub direction_scale: f64,
}

impl MixtureSpec {
    pub fn with_seed(&self, seed: u64) -> MixtureConfig {
        MixtureConfig {
            d: self.d,
            pool_size: self.pool_size,
            val_size: self.val_size,
            test_size: self.test_size,
            target_mass: self.target_mass,
            n_distractors: self.n_distractors,
            direction_scale: self.direction_scale,
            seed,
        }
    }

    fn from_config(c: &MixtureConfig) -> Self {
        Self {
            d: c.d,
            pool_size: c.pool_size,
            val_size: c.val_size,
            test_size: c.test_size,
            target_mass: c.target_mass,
            n_distractors: c.n_distractors,
            direction_scale: c.direction_scale,
        }
    }
}

/// Optimizer grids shared by pool warmups and retraining; validation warmups also
/// sweep `multipliers` on top of `base_rates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub base_rates: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub steps: Vec<usize>,
    /// Perturbation multipliers tried for ToV.
    pub tov_alphas: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            base_rates: vec![0.3, 0.5, 0.7],
            multipliers: vec![0.5, 1.0, 2.0],
            steps: vec![20, 40, 80, 160],
            tov_alphas: vec![0.5, 1.0, 2.0],
        }
    }
}

impl Grids {
    /// Every `base · multiplier`, sorted and deduplicated.
    pub fn warmup_rates(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self
            .base_rates
            .iter()
            .flat_map(|b| self.multipliers.iter().map(move |m| b * m))
            .collect();
        r.sort_by(f64::total_cmp);
        r.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub folds: usize,
    pub neg_size: usize,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            folds: 3,
            neg_size: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSpec {
    /// Rank agreement between the four TACS variants.
    pub variant_agreement: bool,
    /// Top-k size used for variant overlap.
    pub overlap_k: usize,
    /// Number of target-source candidates used for the mean attribution gap.
    pub attribution_candidates: usize,
    /// Size of the extra candidate pool scored to audit warmup reuse; 0 disables.
    pub second_pool_size: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            variant_agreement: true,
            overlap_k: 400,
            attribution_candidates: 256,
            second_pool_size: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub budgets: Vec<usize>,
    pub selectors: Vec<SelectorKind>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub label_noise: f64,
    pub mixture: MixtureSpec,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub calibration: CalibrationSpec,
    #[serde(default)]
    pub tacs: TacsVariant,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

fn positive_all(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "{name} must be a nonempty list of positive numbers"
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Balanced mixture: ten seeds, budgets 128..8192 on a doubling grid.
    pub fn balanced() -> Self {
        Self {
            regime: Regime::Balanced,
            master_seed: 20_240_601,
            seeds: (0..10).collect(),
            budgets: (7..=13).map(|k| 1usize << k).collect(),
            selectors: vec![
                SelectorKind::Tacs,
                SelectorKind::Less,
                SelectorKind::Tov,
                SelectorKind::Random,
            ],
            output_dir: PathBuf::from("out/balanced"),
            label_noise: 0.0,
            mixture: MixtureSpec::from_config(&MixtureConfig::balanced(0)),
            grids: Grids::default(),
            calibration: CalibrationSpec::default(),
            tacs: TacsVariant::default(),
            diagnostics: DiagnosticsSpec::default(),
        }
    }

    /// Rare-target stress test: ten seeds, single budget k = 400.
    pub fn rare_target() -> Self {
        Self {
            regime: Regime::RareTarget,
            budgets: vec![400],
            output_dir: PathBuf::from("out/rare_target"),
            mixture: MixtureSpec::from_config(&MixtureConfig::rare_target(0)),
            diagnostics: DiagnosticsSpec {
                variant_agreement: false,
                ..DiagnosticsSpec::default()
            },
            ..Self::balanced()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config: {}", e.to_string().trim())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        digest_bytes(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be nonempty"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::config("seeds must be distinct"));
        }
        if self.budgets.is_empty() {
            return Err(Error::config("budgets must be nonempty"));
        }
        if let Some(b) = self
            .budgets
            .iter()
            .find(|&&b| b == 0 || b > self.mixture.pool_size)
        {
            return Err(Error::InvalidConfig(format!(
                "budget {b} outside [1, pool_size = {}]",
                self.mixture.pool_size
            )));
        }
        let mut b = self.budgets.clone();
        b.sort_unstable();
        b.dedup();
        if b.len() != self.budgets.len() {
            return Err(Error::config("budgets must be distinct"));
        }
        if self.selectors.is_empty() {
            return Err(Error::config("selectors must be nonempty"));
        }
        let mut s = self.selectors.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.selectors.len() {
            return Err(Error::config("selectors must be distinct"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config("label_noise must lie in [0, 1]"));
        }
        positive_all("grids.base_rates", &self.grids.base_rates)?;
        positive_all("grids.multipliers", &self.grids.multipliers)?;
        positive_all("grids.tov_alphas", &self.grids.tov_alphas)?;
        if self.grids.steps.is_empty() || self.grids.steps.contains(&0) {
            return Err(Error::config(
                "grids.steps must be a nonempty list of positive counts",
            ));
        }
        if self.calibration.folds < 2 || self.calibration.folds > self.mixture.val_size {
            return Err(Error::InvalidConfig(format!(
                "calibration.folds = {} must lie in [2, val_size = {}]",
                self.calibration.folds, self.mixture.val_size
            )));
        }
        if self.calibration.neg_size == 0 {
            return Err(Error::config("calibration.neg_size must be ≥ 1"));
        }
        self.tacs.validate()?;
        self.mixture.with_seed(0).validate()?;
        match self.regime {
            Regime::Balanced => {
                if (self.mixture.target_mass - 0.5).abs() > 1e-12 || self.mixture.n_distractors != 1
                {
                    return Err(Error::config(
                        "balanced regime needs target_mass = 0.5 and n_distractors = 1",
                    ));
                }
            }
            Regime::RareTarget => {
                if self.mixture.n_distractors == 0 {
                    return Err(Error::config("rare_target regime needs n_distractors ≥ 1"));
                }
            }
        }
        Ok(())
    }

    /// Seed for everything data-related in one experiment seed.
    pub fn data_seed(&self, seed: u64) -> u64 {
        derive_seed(
            self.master_seed,
            &[self.regime.name(), "data", &seed.to_string()],
        )
    }

    /// Seed for a named stage shared by all budgets of one experiment seed.
    pub fn stage_seed(&self, stage: &str, seed: u64) -> u64 {
        derive_seed(
            self.master_seed,
            &[self.regime.name(), stage, &seed.to_string()],
        )
    }

    /// Seed for one (selector, budget, seed) cell.
    pub fn cell_seed(&self, selector: SelectorKind, budget: usize, seed: u64) -> u64 {
        derive_seed(
            self.master_seed,
            &[
                self.regime.name(),
                selector.name(),
                &budget.to_string(),
                &seed.to_string(),
            ],
        )
    }
}
