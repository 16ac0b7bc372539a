mod common;

use common::{random_dataset, random_vec, rng};
use proptest::prelude::*;
use tacs_core::model::{
    grad_risk, hessian_risk, log1p_exp, loss, loss_grad, margin_loss, risk, sigmoid,
};
use tacs_core::{ParamVector, RegularizedObjective, SmoothObjective};

fn reference_table() -> Vec<(f64, f64, f64)> {
    include_str!("data/reference_losses.txt")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

#[test]
fn loss_and_sigmoid_match_high_precision_reference() {
    for (m, want_loss, want_sig) in reference_table() {
        let got = margin_loss(m);
        assert!(
            got == want_loss || common::rel_err(got, want_loss) < 4.0 * f64::EPSILON,
            "loss at {m}: {got:e} vs {want_loss:e}"
        );
        let s = sigmoid(m);
        assert!(
            s == want_sig || common::rel_err(s, want_sig) < 4.0 * f64::EPSILON,
            "sigmoid at {m}: {s:e} vs {want_sig:e}"
        );
    }
}

#[test]
fn extreme_margins_stay_finite() {
    assert_eq!(log1p_exp(-1e6), 0.0);
    assert_eq!(log1p_exp(1e6), 1e6);
    assert_eq!(sigmoid(-1e6), 0.0);
    assert_eq!(sigmoid(1e6), 1.0);
}

fn kahan_risk(theta: &ParamVector, obj: &RegularizedObjective<'_>, weights: &[f64]) -> f64 {
    let ds = obj.dataset();
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for (i, ex) in ds.iter().enumerate() {
        let term = weights[i] * common::naive_loss(theta.as_slice(), ex.features, ex.y());
        let y = term - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum + 0.5 * obj.l2_coeff() * theta.norm_squared()
}

#[test]
fn risk_matches_compensated_summation() {
    let mut r = rng(11);
    for trial in 0..20 {
        let ds = random_dataset(&mut r, 6, 500);
        let lambda = 0.1 * (trial % 3) as f64;
        let theta = random_vec(&mut r, 6, 1.5);
        let uniform = vec![1.0 / 500.0; 500];
        let obj = RegularizedObjective::new(&ds)
            .unwrap()
            .with_l2(lambda)
            .unwrap();
        let got = risk(&theta, &obj).unwrap();
        assert!(common::rel_err(got, kahan_risk(&theta, &obj, &uniform)) < 1e-12);

        let w: Vec<f64> = (0..500).map(|i| 0.5 + (i % 7) as f64 * 0.01).collect();
        let wobj = RegularizedObjective::new(&ds)
            .unwrap()
            .with_l2(lambda)
            .unwrap()
            .with_weights(w.clone())
            .unwrap();
        let got = risk(&theta, &wobj).unwrap();
        assert!(common::rel_err(got, kahan_risk(&theta, &wobj, &w)) < 1e-12);
    }
}

/// Central differences of the risk, step chosen per coordinate.
fn fd_gradient(theta: &ParamVector, obj: &RegularizedObjective<'_>) -> ParamVector {
    let h = 1e-5;
    ParamVector::from_iterator(
        theta.len(),
        (0..theta.len()).map(|j| {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[j] += h;
            m[j] -= h;
            (risk(&p, obj).unwrap() - risk(&m, obj).unwrap()) / (2.0 * h)
        }),
    )
}

#[test]
fn gradient_and_hessian_agree_with_finite_differences() {
    let mut r = rng(5);
    let mut worst_grad: f64 = 0.0;
    let mut worst_hess: f64 = 0.0;
    for trial in 0..120 {
        let d = 2 + trial % 7;
        let ds = random_dataset(&mut r, d, 40);
        let lambda = [0.0, 0.01, 0.5][trial % 3];
        let obj = RegularizedObjective::new(&ds)
            .unwrap()
            .with_l2(lambda)
            .unwrap();
        let theta = random_vec(&mut r, d, 1.0);
        let g = grad_risk(&theta, &obj).unwrap();
        let fd = fd_gradient(&theta, &obj);
        worst_grad = worst_grad.max((&g - &fd).norm() / g.norm().max(1e-8));

        let h = hessian_risk(&theta, &obj).unwrap();
        let step = 1e-5;
        for j in 0..d {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[j] += step;
            m[j] -= step;
            let col = (grad_risk(&p, &obj).unwrap() - grad_risk(&m, &obj).unwrap()) / (2.0 * step);
            for i in 0..d {
                worst_hess = worst_hess.max((h[(i, j)] - col[i]).abs());
            }
        }
    }
    assert!(worst_grad < 1e-6, "gradient relative error {worst_grad:e}");
    assert!(worst_hess < 1e-5, "Hessian absolute error {worst_hess:e}");
}

#[test]
fn example_gradient_matches_naive_formula() {
    let mut r = rng(8);
    let ds = random_dataset(&mut r, 4, 10);
    let obj = RegularizedObjective::new(&ds)
        .unwrap()
        .with_l2(0.3)
        .unwrap();
    let theta = random_vec(&mut r, 4, 1.0);
    for i in 0..10 {
        let ex = ds.example(i);
        let want = common::naive_grad(theta.as_slice(), ex.features, ex.y());
        let got = obj.example_gradient(&theta, i).unwrap();
        let got2 = loss_grad(&theta, ex).unwrap();
        for j in 0..4 {
            assert!((got[j] - want[j]).abs() < 1e-15);
            assert_eq!(got[j], got2[j]);
        }
        let l = loss(&theta, ex).unwrap();
        assert!(
            common::rel_err(l, common::naive_loss(theta.as_slice(), ex.features, ex.y())) < 1e-14
        );
    }
}

#[test]
fn hessian_spectrum_respects_curvature_bounds() {
    let mut r = rng(21);
    for _ in 0..30 {
        let ds = random_dataset(&mut r, 5, 30);
        let lambda = 0.1;
        let obj = RegularizedObjective::new(&ds)
            .unwrap()
            .with_l2(lambda)
            .unwrap();
        let theta = random_vec(&mut r, 5, 2.0);
        let eig = hessian_risk(&theta, &obj).unwrap().symmetric_eigenvalues();
        // λ ≤ eig ≤ λ + max‖x‖²/4
        let max_sq = ds
            .iter()
            .map(|e| e.features.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        assert!(eig.min() >= lambda - 1e-12);
        assert!(eig.max() <= lambda + max_sq / 4.0 + 1e-12);
        assert!(obj.strong_convexity() <= eig.min() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn risk_is_convex_along_segments(seed in 0u64..10_000, t in 0.0f64..1.0) {
        let mut r = rng(seed);
        let ds = random_dataset(&mut r, 3, 25);
        let obj = RegularizedObjective::new(&ds).unwrap().with_l2(0.05).unwrap();
        let a = random_vec(&mut r, 3, 2.0);
        let b = random_vec(&mut r, 3, 2.0);
        let mid = &a * (1.0 - t) + &b * t;
        let lhs = risk(&mid, &obj).unwrap();
        let rhs = (1.0 - t) * risk(&a, &obj).unwrap() + t * risk(&b, &obj).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn loss_is_decreasing_in_margin(m in -50.0f64..50.0, dm in 1e-6f64..10.0) {
        prop_assert!(margin_loss(m + dm) <= margin_loss(m));
        prop_assert!(margin_loss(m) > 0.0);
    }
}
