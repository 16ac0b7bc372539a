mod common;

use common::{naive_grad, naive_loss, random_dataset, random_vec, rng};
use tacs_core::model::{grad_risk, hessian_risk, risk};
use tacs_core::synthdata::{gen_balanced_mixture, MixtureConfig};
use tacs_core::trainer::{displacement, rate_at, train_gd};
use tacs_core::{LabeledDataset, LrSchedule, ParamVector, RegularizedObjective, Trajectory};

fn small_mixture(seed: u64) -> tacs_core::synthdata::MixtureData {
    let cfg = MixtureConfig {
        pool_size: 2_000,
        test_size: 200,
        ..MixtureConfig::balanced(seed)
    };
    gen_balanced_mixture(&cfg).unwrap()
}

/// Mean over held-out rows of |loss drop − Σ_t η_t ⟨∇ℓ(θ_t; z), ∇R_val(θ_t)⟩|.
fn mean_chain_rule_residual(
    traj: &Trajectory,
    val: &LabeledDataset,
    held_out: &LabeledDataset,
) -> f64 {
    let val_grads: Vec<Vec<f64>> = (0..traj.steps())
        .map(|t| {
            let th = traj.checkpoint(t).as_slice();
            let mut g = vec![0.0; th.len()];
            for ex in val.iter() {
                for (gj, v) in g.iter_mut().zip(naive_grad(th, ex.features, ex.y())) {
                    *gj += v;
                }
            }
            g.iter().map(|v| v / val.len() as f64).collect()
        })
        .collect();
    let mut total = 0.0;
    for ex in held_out.iter() {
        let drop = naive_loss(traj.first().as_slice(), ex.features, ex.y())
            - naive_loss(traj.last().as_slice(), ex.features, ex.y());
        let mut path = 0.0;
        for (t, g) in val_grads.iter().enumerate() {
            let gz = naive_grad(traj.checkpoint(t).as_slice(), ex.features, ex.y());
            path += traj.rates()[t] * gz.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
        }
        total += (drop - path).abs();
    }
    total / held_out.len() as f64
}

#[test]
fn chain_rule_residual_halves_with_half_rate_and_double_depth() {
    for seed in 0..10 {
        let data = small_mixture(seed);
        let obj = RegularizedObjective::new(&data.val).unwrap();
        let zero = ParamVector::zeros(data.val.dim());
        let coarse = train_gd(&zero, &obj, &LrSchedule::linear(0.5, 80).unwrap()).unwrap();
        let fine = train_gd(&zero, &obj, &LrSchedule::linear(0.25, 160).unwrap()).unwrap();
        let ratio = mean_chain_rule_residual(&coarse, &data.val, &data.test)
            / mean_chain_rule_residual(&fine, &data.val, &data.test);
        assert!((1.5..=2.5).contains(&ratio), "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn linear_rates_sum_to_arithmetic_series() {
    for (base, t) in [(0.5, 10), (1.3, 7), (0.05, 160)] {
        let s = LrSchedule::linear(base, t).unwrap();
        let sum: f64 = (0..t).map(|i| rate_at(&s, i).unwrap()).sum();
        assert!((sum - base * (t as f64 + 1.0) / 2.0).abs() < 1e-12);
    }
    let s = LrSchedule::linear(0.5, 10).unwrap();
    assert_eq!(rate_at(&s, 5).unwrap(), 0.25);
    assert!(rate_at(&s, 10).is_err());
}

#[test]
fn displacement_equals_accumulated_updates() {
    let mut r = rng(4);
    let ds = random_dataset(&mut r, 5, 50);
    let obj = RegularizedObjective::new(&ds)
        .unwrap()
        .with_l2(0.01)
        .unwrap();
    let start = random_vec(&mut r, 5, 0.3);
    let traj = train_gd(&start, &obj, &LrSchedule::linear(0.8, 40).unwrap()).unwrap();
    let mut acc = ParamVector::zeros(5);
    for t in 0..traj.steps() {
        acc -= grad_risk(traj.checkpoint(t), &obj).unwrap() * traj.rates()[t];
    }
    assert!((displacement(&traj) - acc).norm() < 1e-12);
    let first = &start - grad_risk(&start, &obj).unwrap() * 0.8;
    assert_eq!(traj.checkpoint(1), &first);
}

#[test]
fn descent_is_monotone_below_inverse_smoothness() {
    let mut r = rng(12);
    for _ in 0..20 {
        let ds = random_dataset(&mut r, 6, 80);
        let obj = RegularizedObjective::new(&ds)
            .unwrap()
            .with_l2(0.02)
            .unwrap();
        // global smoothness bound λ + max‖x‖²/4
        let beta = 0.02
            + ds.iter()
                .map(|e| e.features.iter().map(|v| v * v).sum::<f64>())
                .fold(0.0, f64::max)
                / 4.0;
        let start = random_vec(&mut r, 6, 1.0);
        let h0 = hessian_risk(&start, &obj)
            .unwrap()
            .symmetric_eigenvalues()
            .max();
        assert!(h0 <= beta);
        let traj = train_gd(&start, &obj, &LrSchedule::constant(1.0 / beta, 60).unwrap()).unwrap();
        let risks: Vec<f64> = traj
            .checkpoints()
            .iter()
            .map(|c| risk(c, &obj).unwrap())
            .collect();
        assert!(risks.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }
}

#[test]
fn validation_warmup_reduces_validation_risk() {
    let data = small_mixture(0);
    let obj = RegularizedObjective::new(&data.val).unwrap();
    let zero = ParamVector::zeros(data.val.dim());
    let traj = train_gd(&zero, &obj, &LrSchedule::linear(0.5, 80).unwrap()).unwrap();
    assert!(risk(traj.last(), &obj).unwrap() < risk(traj.first(), &obj).unwrap());
}

#[test]
fn trajectory_files_round_trip_bit_exactly() {
    let mut r = rng(2);
    let ds = random_dataset(&mut r, 4, 30);
    let obj = RegularizedObjective::new(&ds).unwrap();
    let traj = train_gd(
        &random_vec(&mut r, 4, 1.0),
        &obj,
        &LrSchedule::linear(0.37, 25).unwrap(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.traj");
    traj.save(&path).unwrap();
    let back = Trajectory::load(&path).unwrap();
    for (a, b) in traj.checkpoints().iter().zip(back.checkpoints()) {
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert!(traj
        .rates()
        .iter()
        .zip(back.rates())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(traj, back);
    let mut bytes = Vec::new();
    back.write_to(&mut bytes).unwrap();
    assert_eq!(bytes, std::fs::read(&path).unwrap());
}

#[test]
fn dataset_files_round_trip_bit_exactly() {
    let data = small_mixture(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.csv");
    data.pool.save(&path).unwrap();
    let back = LabeledDataset::load(&path).unwrap();
    assert_eq!(back, data.pool);
    assert_eq!(back.content_digest(), data.pool.content_digest());
    for i in 0..back.len() {
        let (a, b) = (back.row(i), data.pool.row(i));
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let mut bytes = Vec::new();
    back.write_to(&mut bytes).unwrap();
    assert_eq!(bytes, std::fs::read(&path).unwrap());
}
