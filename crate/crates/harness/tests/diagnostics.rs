use proptest::prelude::*;
use tacs_harness::diagnostics::{midranks, spearman, top_k_overlap};

/// Spearman from the textbook `1 − 6Σd²/(n(n²−1))`, valid without ties.
fn spearman_no_ties(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = (pos + 1) as f64;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn distinct(v: &[i32]) -> bool {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.dedup();
    s.len() == v.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn midranks_sum_to_triangular_number(v in prop::collection::vec(-4i32..4, 1..50)) {
        let x: Vec<f64> = v.iter().map(|&a| f64::from(a)).collect();
        let n = x.len() as f64;
        prop_assert!((midranks(&x).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn spearman_matches_closed_form_without_ties(
        a in prop::collection::vec(-1000i32..1000, 3..40).prop_filter("distinct", |v| distinct(v)),
        seed in 0u64..1000,
    ) {
        let x: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
        // a deterministic scramble as the second list
        let y: Vec<f64> = (0..x.len()).map(|i| ((i as u64 * 7919 + seed * 104729) % 10007) as f64 + i as f64 * 1e-6).collect();
        prop_assert!((spearman(&x, &y) - spearman_no_ties(&x, &y)).abs() < 1e-9);
    }

    #[test]
    fn spearman_is_one_under_increasing_maps(v in prop::collection::vec(-50.0f64..50.0, 2..40)) {
        prop_assume!(v.iter().any(|x| *x != v[0]));
        let w: Vec<f64> = v.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        prop_assert!((spearman(&v, &w) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        prop_assert!((spearman(&v, &neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_is_symmetric_for_equal_sizes(
        a in prop::collection::btree_set(0usize..100, 1..30),
        b in prop::collection::btree_set(0usize..100, 1..30),
    ) {
        let k = a.len().min(b.len());
        let a: Vec<usize> = a.into_iter().take(k).collect();
        let b: Vec<usize> = b.into_iter().take(k).collect();
        let o = top_k_overlap(&a, &b);
        prop_assert_eq!(o, top_k_overlap(&b, &a));
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert_eq!(top_k_overlap(&a, &a), 1.0);
    }
}

#[test]
fn constant_input_has_no_rank_correlation() {
    assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_nan());
}
