//! Exact Wasserstein-1 between equal-size empirical samples via linear assignment.

use serde::{Deserialize, Serialize};

use crate::dataset::{ExampleRef, LabeledDataset};
use crate::error::{Error, Result};

/// Largest sample size accepted by [`w1_exact`].
pub const MAX_EXACT_SIZE: usize = 512;

/// Ground metric `d(z, z′) = ‖x − x′‖ + label_cost·1[y ≠ y′]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundMetric {
    pub label_cost: f64,
}

impl Default for GroundMetric {
    fn default() -> Self {
        Self { label_cost: 10.0 }
    }
}

impl GroundMetric {
    pub fn distance(&self, a: ExampleRef<'_>, b: ExampleRef<'_>) -> f64 {
        let sq: f64 = a
            .features
            .iter()
            .zip(b.features)
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        let flip = if a.label != b.label {
            self.label_cost
        } else {
            0.0
        };
        sq.sqrt() + flip
    }
}

/// Minimum-cost perfect matching on a square cost matrix (row `i` → column `out[i]`).
///
/// Shortest-augmenting-path Hungarian method with dual potentials, `O(n³)`.
pub fn optimal_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == n));
    let inf = f64::INFINITY;
    // 1-based; column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

/// W1 between two equal-size samples: mean cost of the optimal matching.
pub fn w1_exact(a: &LabeledDataset, b: &LabeledDataset, metric: &GroundMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "exact W1 needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() > MAX_EXACT_SIZE {
        return Err(Error::config(format!(
            "exact W1 is limited to {MAX_EXACT_SIZE} points per side"
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::config("samples differ in dimension"));
    }
    let n = a.len();
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| metric.distance(a.example(i), b.example(j)))
                .collect()
        })
        .collect();
    let assign = optimal_assignment(&cost);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok(total / n as f64)
}
