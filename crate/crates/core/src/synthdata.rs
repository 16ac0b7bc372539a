//! Deterministic generators for the logistic mixture experiments.
//!
//! Features are standard normal, labels are Bernoulli with success probability
//! `σ(⟨x, θ⟩)` where `θ` is the direction of the component that generated the row.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Provenance, Source};
use crate::error::{Error, Result};
use crate::model::sigmoid;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub d: usize,
    pub pool_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub target_mass: f64,
    pub n_distractors: usize,
    pub direction_scale: f64,
    pub seed: u64,
}

impl MixtureConfig {
    /// Equal target/distractor mass, `d = 10`, pool of 10^5.
    pub fn balanced(seed: u64) -> Self {
        Self {
            d: 10,
            pool_size: 100_000,
            val_size: 1_000,
            test_size: 10_000,
            target_mass: 0.5,
            n_distractors: 1,
            direction_scale: 3.0,
            seed,
        }
    }

    /// 5% target mass spread against four distractor environments, `d = 48`,
    /// and a validation set of a few dozen examples.
    pub fn rare_target(seed: u64) -> Self {
        Self {
            d: 48,
            pool_size: 100_000,
            val_size: 30,
            test_size: 10_000,
            target_mass: 0.05,
            n_distractors: 4,
            direction_scale: 3.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::config(format!(
                "mixture dimension d={} must be ≥ 2",
                self.d
            )));
        }
        if self.pool_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::config("pool, validation and test sizes must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.target_mass) {
            return Err(Error::config(format!(
                "target_mass {} outside [0, 1]",
                self.target_mass
            )));
        }
        if !(self.direction_scale.is_finite() && self.direction_scale > 0.0) {
            return Err(Error::config("direction_scale must be positive and finite"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        rng::digest_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// The three splits of one mixture instance plus the directions that generated them.
#[derive(Debug, Clone)]
pub struct MixtureData {
    pub pool: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    pub target_direction: Vec<f64>,
    pub distractor_directions: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn scaled_unit(mut v: Vec<f64>, scale: f64) -> Vec<f64> {
    let norm = dot(&v, &v).sqrt();
    for x in &mut v {
        *x *= scale / norm;
    }
    v
}

/// Removes the component of `v` along the unit vector `u`. Two passes keep the
/// residual inner product at rounding level.
fn orthogonalize(v: &mut [f64], u: &[f64]) {
    for _ in 0..2 {
        let c = dot(v, u);
        for (x, ui) in v.iter_mut().zip(u) {
            *x -= c * ui;
        }
    }
}

/// Appends `n` rows with standard-normal features and labels drawn from `σ(⟨x, θ⟩)`.
fn draw_rows(
    rng: &mut StreamRng,
    theta: &[f64],
    n: usize,
    source: Source,
    rows: &mut Vec<(Vec<f64>, i8, Source)>,
) {
    for _ in 0..n {
        let x = gaussian_vec(rng, theta.len());
        let p = sigmoid(dot(&x, theta));
        let u: f64 = rng.random();
        let y = if u < p { 1 } else { -1 };
        rows.push((x, y, source));
    }
}

fn pack(d: usize, rows: Vec<(Vec<f64>, i8, Source)>, provenance: Provenance) -> LabeledDataset {
    let n = rows.len();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for (x, y, s) in rows {
        features.extend_from_slice(&x);
        labels.push(y);
        sources.push(s);
    }
    LabeledDataset::from_parts(d, features, labels, sources, vec![true; n], provenance)
}

/// `n` examples with `x ~ N(0, I_d)` and `Pr(y = +1 | x) = σ(⟨x, θ⟩)`, all tagged as target.
pub fn sample_logistic(theta: &[f64], n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::config("sample_logistic needs n ≥ 1"));
    }
    if theta.is_empty() {
        return Err(Error::config("sample_logistic needs a nonempty theta"));
    }
    if theta.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidNumeric("theta contains NaN".into()));
    }
    let mut rng = rng::stream(seed, "sample_logistic");
    let mut rows = Vec::with_capacity(n);
    draw_rows(&mut rng, theta, n, Source::Target, &mut rows);
    let digest = rng::digest_f64s(theta);
    Ok(pack(
        theta.len(),
        rows,
        Provenance::new("sample_logistic", seed, digest),
    ))
}

fn directions(cfg: &MixtureConfig) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = rng::stream(cfg.seed, "theta_star");
    let target = scaled_unit(gaussian_vec(&mut rng, cfg.d), cfg.direction_scale);
    let unit = scaled_unit(target.clone(), 1.0);
    let distractors = (0..cfg.n_distractors)
        .map(|k| {
            let mut rng = rng::stream(cfg.seed, &format!("distractor_direction/{k}"));
            let mut v = gaussian_vec(&mut rng, cfg.d);
            orthogonalize(&mut v, &unit);
            scaled_unit(v, cfg.direction_scale)
        })
        .collect();
    (target, distractors)
}

/// Exact per-component counts: `round(mass · pool)` target rows and the rest split
/// evenly across distractors (earlier distractors take the remainder).
fn component_counts(cfg: &MixtureConfig) -> Result<(usize, Vec<usize>)> {
    let expected = cfg.target_mass * cfg.pool_size as f64;
    if expected < 1.0 {
        return Err(Error::config(format!(
            "target_mass·pool_size = {expected} leaves no target examples"
        )));
    }
    let n_target = expected.round() as usize;
    let rest = cfg.pool_size - n_target;
    if rest > 0 && cfg.n_distractors == 0 {
        return Err(Error::config("non-target mass requires n_distractors ≥ 1"));
    }
    let k = cfg.n_distractors.max(1);
    let counts = (0..cfg.n_distractors)
        .map(|j| rest / k + usize::from(j < rest % k))
        .collect();
    Ok((n_target, counts))
}

fn generate(cfg: &MixtureConfig, generator: &str) -> Result<MixtureData> {
    cfg.validate()?;
    let (n_target, counts) = component_counts(cfg)?;
    let (target, distractors) = directions(cfg);
    let digest = cfg.digest();

    let mut rows = Vec::with_capacity(cfg.pool_size);
    draw_rows(
        &mut rng::stream(cfg.seed, "pool/target"),
        &target,
        n_target,
        Source::Target,
        &mut rows,
    );
    for (k, (dir, &count)) in distractors.iter().zip(&counts).enumerate() {
        draw_rows(
            &mut rng::stream(cfg.seed, &format!("pool/distractor/{k}")),
            dir,
            count,
            Source::Distractor(k as u16),
            &mut rows,
        );
    }
    rows.shuffle(&mut rng::stream(cfg.seed, "pool/order"));
    let pool = pack(
        cfg.d,
        rows,
        Provenance::new(format!("{generator}.pool"), cfg.seed, digest.clone()),
    );

    let split = |tag: &str, n: usize| {
        let mut rows = Vec::with_capacity(n);
        draw_rows(
            &mut rng::stream(cfg.seed, tag),
            &target,
            n,
            Source::Target,
            &mut rows,
        );
        pack(
            cfg.d,
            rows,
            Provenance::new(format!("{generator}.{tag}"), cfg.seed, digest.clone()),
        )
    };
    let val = split("val", cfg.val_size);
    let test = split("test", cfg.test_size);

    Ok(MixtureData {
        pool,
        val,
        test,
        target_direction: target,
        distractor_directions: distractors,
    })
}

/// Pool with equal target and distractor mass; the single distractor direction is
/// orthogonal to the target direction. Validation and test come from the target only.
pub fn gen_balanced_mixture(cfg: &MixtureConfig) -> Result<MixtureData> {
    if cfg.d < 2 {
        return Err(Error::config(
            "balanced mixture needs d ≥ 2 to build an orthogonal distractor",
        ));
    }
    if (cfg.target_mass - 0.5).abs() > 1e-12 {
        return Err(Error::config(format!(
            "balanced mixture requires target_mass = 0.5, got {}",
            cfg.target_mass
        )));
    }
    if cfg.n_distractors != 1 {
        return Err(Error::config(format!(
            "balanced mixture has exactly one distractor, got n_distractors = {}",
            cfg.n_distractors
        )));
    }
    generate(cfg, "balanced_mixture")
}

/// Pool where only `target_mass` of the rows come from the target; the remainder is
/// split across `n_distractors` environments with their own directions.
pub fn gen_rare_target(cfg: &MixtureConfig) -> Result<MixtureData> {
    if cfg.n_distractors == 0 {
        return Err(Error::config("rare-target regime needs n_distractors ≥ 1"));
    }
    generate(cfg, "rare_target")
}

/// A generic negative reference: `n` rows drawn evenly from the distractor components.
/// Uses its own stream so it never overlaps the pool.
pub fn distractor_reference(data: &MixtureData, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::config("negative reference needs n ≥ 1"));
    }
    let k = data.distractor_directions.len();
    if k == 0 {
        return Err(Error::config("no distractor components to sample from"));
    }
    let d = data.target_direction.len();
    let mut rng = rng::stream(seed, "neg_reference");
    let mut rows = Vec::with_capacity(n);
    for (j, dir) in data.distractor_directions.iter().enumerate() {
        let count = n / k + usize::from(j < n % k);
        draw_rows(
            &mut rng,
            dir,
            count,
            Source::Distractor(j as u16),
            &mut rows,
        );
    }
    Ok(pack(
        d,
        rows,
        Provenance::new(
            "neg_reference",
            seed,
            data.pool.provenance().config_digest.clone(),
        ),
    ))
}

/// Copy of `pool` with a uniformly random `⌈rate·n⌉` subset of labels flipped and
/// marked unclean. Every other row is marked clean; sources are untouched.
pub fn corrupt_labels(pool: &LabeledDataset, rate: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!(
            "corruption rate {rate} outside [0, 1]"
        )));
    }
    let n = pool.len();
    // guard against rate·n landing a hair above an integer
    let n_flip = ((rate * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = rng::stream(seed, "corrupt_labels");
    let flipped = rand::seq::index::sample(&mut rng, n, n_flip.min(n));

    let mut out = pool.clone();
    out.clean_mut().fill(true);
    for i in flipped.iter() {
        out.labels_mut()[i] = -out.labels()[i];
        out.clean_mut()[i] = false;
    }
    let p = pool.provenance();
    out.set_provenance(Provenance::new(
        format!("{}+corrupt", p.generator),
        seed,
        rng::digest_bytes(format!("{}:{rate}", p.config_digest).as_bytes()),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_balanced(seed: u64) -> MixtureConfig {
        MixtureConfig {
            pool_size: 2_000,
            val_size: 100,
            test_size: 500,
            ..MixtureConfig::balanced(seed)
        }
    }

    #[test]
    fn zero_theta_labels_are_fair_coins() {
        let ds = sample_logistic(&[0.0; 4], 10_000, 3).unwrap();
        let pos = ds.labels().iter().filter(|&&y| y == 1).count() as f64 / 1e4;
        assert!((pos - 0.5).abs() < 0.02, "{pos}");
    }

    #[test]
    fn saturated_theta_labels_follow_sign() {
        let mut theta = vec![0.0; 3];
        theta[0] = 1e12;
        let ds = sample_logistic(&theta, 1000, 11).unwrap();
        for ex in ds.iter() {
            assert_eq!(ex.label, if ex.features[0] > 0.0 { 1 } else { -1 });
        }
    }

    #[test]
    fn bin_conditional_frequency_matches_sigmoid() {
        let mut theta = vec![0.0; 3];
        theta[0] = 1.0;
        let ds = sample_logistic(&theta, 50_000, 5).unwrap();
        // oracle: empirical frequency of +1 among rows with x1 in [0.9, 1.1]
        let (mut hits, mut total) = (0usize, 0usize);
        for ex in ds.iter() {
            if (0.9..=1.1).contains(&ex.features[0]) {
                total += 1;
                hits += usize::from(ex.label == 1);
            }
        }
        assert!(total > 1000);
        let freq = hits as f64 / total as f64;
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((expected - 0.7311).abs() < 1e-4);
        assert!((freq - expected).abs() < 0.03, "{freq}");
    }

    #[test]
    fn sample_logistic_rejects_empty_inputs() {
        assert!(matches!(
            sample_logistic(&[1.0], 0, 1),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            sample_logistic(&[], 5, 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn balanced_mixture_composition() {
        let data = gen_balanced_mixture(&small_balanced(1)).unwrap();
        assert_eq!(data.pool.len(), 2_000);
        assert_eq!(data.pool.target_share(), 0.5);
        assert_eq!(data.val.target_share(), 1.0);
        assert_eq!(data.test.target_share(), 1.0);
        let ip = dot(&data.target_direction, &data.distractor_directions[0]);
        assert!(ip.abs() < 1e-12, "{ip}");
        let norm = dot(&data.target_direction, &data.target_direction).sqrt();
        assert!((norm - 3.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_defaults_are_accepted_verbatim() {
        let cfg = MixtureConfig::balanced(0);
        assert_eq!(
            (cfg.d, cfg.pool_size, cfg.val_size, cfg.test_size),
            (10, 100_000, 1_000, 10_000)
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn balanced_mixture_rejects_bad_configs() {
        let mut cfg = small_balanced(0);
        cfg.d = 1;
        assert!(matches!(
            gen_balanced_mixture(&cfg),
            Err(Error::InvalidConfig(_))
        ));
        let mut cfg = small_balanced(0);
        cfg.target_mass = 0.3;
        assert!(gen_balanced_mixture(&cfg).is_err());
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = gen_balanced_mixture(&small_balanced(42)).unwrap();
        let b = gen_balanced_mixture(&small_balanced(42)).unwrap();
        assert_eq!(a.pool, b.pool);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test.content_digest(), b.test.content_digest());
        let c = gen_balanced_mixture(&small_balanced(43)).unwrap();
        assert_ne!(a.pool.content_digest(), c.pool.content_digest());
    }

    #[test]
    fn rare_target_counts_are_exact() {
        let cfg = MixtureConfig {
            pool_size: 10_001,
            d: 8,
            ..MixtureConfig::rare_target(2)
        };
        let data = gen_rare_target(&cfg).unwrap();
        let share = data.pool.target_share();
        assert!((share - 0.05).abs() <= 1.0 / 10_001.0, "{share}");
        let mut per = [0usize; 4];
        for s in data.pool.sources() {
            if let Source::Distractor(k) = s {
                per[*k as usize] += 1;
            }
        }
        let max = *per.iter().max().unwrap();
        let min = *per.iter().min().unwrap();
        assert!(max - min <= 1, "{per:?}");
        assert_eq!(data.distractor_directions.len(), 4);
        for (i, a) in data.distractor_directions.iter().enumerate() {
            assert!(dot(a, &data.target_direction).abs() < 1e-12);
            for b in &data.distractor_directions[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn rare_target_with_one_distractor_is_two_component() {
        let cfg = MixtureConfig {
            pool_size: 2_000,
            d: 6,
            n_distractors: 1,
            ..MixtureConfig::rare_target(4)
        };
        let data = gen_rare_target(&cfg).unwrap();
        let n_target = data.pool.sources().iter().filter(|s| s.is_target()).count();
        assert_eq!(n_target, 100);
        assert!(data
            .pool
            .sources()
            .iter()
            .all(|s| matches!(s, Source::Target | Source::Distractor(0))));
    }

    #[test]
    fn rare_target_needs_some_target_mass() {
        let cfg = MixtureConfig {
            pool_size: 10,
            ..MixtureConfig::rare_target(0)
        };
        assert!(matches!(
            gen_rare_target(&cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn corruption_extremes() {
        let data = gen_balanced_mixture(&small_balanced(8)).unwrap();
        let same = corrupt_labels(&data.pool, 0.0, 1).unwrap();
        assert_eq!(same.labels(), data.pool.labels());
        assert!(same.clean_flags().iter().all(|&c| c));
        let all = corrupt_labels(&data.pool, 1.0, 1).unwrap();
        assert!(all.clean_flags().iter().all(|&c| !c));
        for (a, b) in all.labels().iter().zip(data.pool.labels()) {
            assert_eq!(*a, -*b);
        }
        assert!(corrupt_labels(&data.pool, 1.5, 1).is_err());
    }

    #[test]
    fn corruption_flips_exact_count_reproducibly() {
        let ds = sample_logistic(&[1.0, -1.0], 1000, 21).unwrap();
        let a = corrupt_labels(&ds, 0.4, 77).unwrap();
        let b = corrupt_labels(&ds, 0.4, 77).unwrap();
        // recount by diffing against the input
        let diff: Vec<usize> = (0..ds.len())
            .filter(|&i| a.labels()[i] != ds.labels()[i])
            .collect();
        assert_eq!(diff.len(), 400);
        assert!(diff.iter().all(|&i| !a.clean_flags()[i]));
        assert_eq!(a.clean_flags().iter().filter(|&&c| !c).count(), 400);
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.sources(), ds.sources());
    }

    #[test]
    fn negative_reference_draws_only_distractors() {
        let data = gen_rare_target(&MixtureConfig {
            pool_size: 4_000,
            d: 6,
            ..MixtureConfig::rare_target(3)
        })
        .unwrap();
        let neg = distractor_reference(&data, 100, 3).unwrap();
        assert_eq!(neg.len(), 100);
        assert!(neg.sources().iter().all(|s| !s.is_target()));
    }
}
