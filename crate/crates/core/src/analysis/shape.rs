use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::trainer::{displacement, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub d_val_retrain: f64,
    pub d_pool_retrain: f64,
    /// `d_val_retrain / d_pool_retrain`; absent when the denominator is zero.
    pub ratio: Option<f64>,
}

/// `(θ_t − θ_0) / ‖θ_T − θ_0‖` for every checkpoint.
fn normalized_path(traj: &Trajectory) -> Result<Vec<ParamVector>> {
    let disp = displacement(traj);
    let norm = disp.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateTrajectory(format!(
            "trajectory {} has zero end-to-end displacement",
            traj.objective_tag()
        )));
    }
    let origin = traj.first();
    Ok(traj
        .checkpoints()
        .iter()
        .map(|c| (c - origin) / norm)
        .collect())
}

/// Linear interpolation of a path at normalized time `s ∈ [0, 1]`.
fn sample_at(path: &[ParamVector], s: f64) -> ParamVector {
    let steps = path.len() - 1;
    if steps == 0 {
        return path[0].clone();
    }
    let u = s * steps as f64;
    let i = (u.floor() as usize).min(steps - 1);
    let frac = u - i as f64;
    if frac == 0.0 {
        return path[i].clone();
    }
    &path[i] * (1.0 - frac) + &path[i + 1] * frac
}

fn resample(path: &[ParamVector], points: usize) -> Vec<ParamVector> {
    if path.len() == points {
        return path.to_vec();
    }
    let k = (points - 1) as f64;
    (0..points).map(|j| sample_at(path, j as f64 / k)).collect()
}

/// Mean checkpoint-wise distance between displacement-normalized paths.
///
/// Paths of different lengths are both interpolated in normalized time onto
/// `max(T_A, T_B) + 1` points.
pub fn shape_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::config("trajectories differ in dimension"));
    }
    let pa = normalized_path(a)?;
    let pb = normalized_path(b)?;
    let points = pa.len().max(pb.len());
    let ra = resample(&pa, points);
    let rb = resample(&pb, points);
    let total: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).norm()).sum();
    Ok(total / points as f64)
}

pub fn shape_ratio(
    traj_retrain: &Trajectory,
    traj_val: &Trajectory,
    traj_pool: &Trajectory,
) -> Result<ShapeReport> {
    let d_val_retrain = shape_distance(traj_val, traj_retrain)?;
    let d_pool_retrain = shape_distance(traj_pool, traj_retrain)?;
    let ratio = (d_pool_retrain > 0.0).then(|| d_val_retrain / d_pool_retrain);
    Ok(ShapeReport {
        d_val_retrain,
        d_pool_retrain,
        ratio,
    })
}

/// Orthonormal plane spanned by the retraining displacement and the orthogonal part
/// of the validation displacement. Used only to draw endpoint directions.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointBasis {
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
}

impl EndpointBasis {
    pub fn project(&self, v: &DVector<f64>) -> (f64, f64) {
        (self.e1.dot(v), self.e2.dot(v))
    }

    /// Coordinates of a trajectory's unit end-to-end displacement.
    pub fn project_direction(&self, traj: &Trajectory) -> Result<(f64, f64)> {
        let disp = displacement(traj);
        let n = disp.norm();
        if n == 0.0 {
            return Err(Error::DegenerateTrajectory("zero displacement".into()));
        }
        Ok(self.project(&(disp / n)))
    }
}

pub fn endpoint_basis(traj_retrain: &Trajectory, traj_val: &Trajectory) -> Result<EndpointBasis> {
    let r = displacement(traj_retrain);
    let v = displacement(traj_val);
    if r.len() != v.len() {
        return Err(Error::config("trajectories differ in dimension"));
    }
    let rn = r.norm();
    let vn = v.norm();
    if rn == 0.0 || vn == 0.0 {
        return Err(Error::DegenerateBasis("zero displacement".into()));
    }
    let e1 = r / rn;
    let mut u = &v - &e1 * e1.dot(&v);
    // second pass for orthogonality at rounding level
    u -= &e1 * e1.dot(&u);
    let un = u.norm();
    if un <= 1e-12 * vn {
        return Err(Error::DegenerateBasis(
            "validation displacement is parallel to the retraining displacement".into(),
        ));
    }
    Ok(EndpointBasis { e1, e2: u / un })
}
