#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tacs_core::{LabeledDataset, LabeledExample, ParamVector, Provenance, Source};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the helper free of extra dependencies
    let u: f64 = r.random::<f64>().max(1e-300);
    let v: f64 = r.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

pub fn random_vec(r: &mut ChaCha8Rng, d: usize, scale: f64) -> ParamVector {
    ParamVector::from_iterator(d, (0..d).map(|_| scale * gauss(r)))
}

/// `n` rows with Gaussian features; labels and sources drawn uniformly.
pub fn random_dataset(r: &mut ChaCha8Rng, d: usize, n: usize) -> LabeledDataset {
    let rows = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| gauss(r)).collect();
            let y = if r.random::<bool>() { 1 } else { -1 };
            let s = if r.random::<bool>() {
                Source::Target
            } else {
                Source::Distractor(0)
            };
            LabeledExample::new(x, y, s)
        })
        .collect();
    LabeledDataset::from_examples(d, rows, Provenance::new("test", 0, "-")).unwrap()
}

/// Reference logistic loss written out directly.
pub fn naive_loss(theta: &[f64], x: &[f64], y: f64) -> f64 {
    let m: f64 = y * theta.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

pub fn naive_grad(theta: &[f64], x: &[f64], y: f64) -> Vec<f64> {
    let m: f64 = y * theta.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let s = 1.0 / (1.0 + m.exp());
    x.iter().map(|xi| -y * s * xi).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
