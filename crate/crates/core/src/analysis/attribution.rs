use crate::dataset::ExampleRef;
use crate::error::Result;
use crate::model::{grad_risk, loss_grad, RegularizedObjective};
use crate::trainer::Trajectory;

/// Discrete trajectory score `Σ_t η_t ⟨∇R(θ_t), ∇ℓ(θ_t; z)⟩` over every update step
/// of `traj`, where `R` is the target objective.
pub fn path_score(
    traj: &Trajectory,
    z: ExampleRef<'_>,
    target: &RegularizedObjective<'_>,
) -> Result<f64> {
    let mut total = 0.0;
    for (t, &eta) in traj.rates().iter().enumerate() {
        let theta = traj.checkpoint(t);
        let g_target = grad_risk(theta, target)?;
        let g_z = loss_grad(theta, z)?;
        total += eta * g_target.dot(&g_z);
    }
    Ok(total)
}

/// [`path_score`] for many candidates, computing the target gradients once.
pub fn path_scores<'a>(
    traj: &Trajectory,
    candidates: impl IntoIterator<Item = ExampleRef<'a>>,
    target: &RegularizedObjective<'_>,
) -> Result<Vec<f64>> {
    let weighted = traj
        .rates()
        .iter()
        .enumerate()
        .map(|(t, &eta)| Ok(grad_risk(traj.checkpoint(t), target)? * eta))
        .collect::<Result<Vec<_>>>()?;
    candidates
        .into_iter()
        .map(|z| {
            let mut total = 0.0;
            for (t, g) in weighted.iter().enumerate() {
                total += g.dot(&loss_grad(traj.checkpoint(t), z)?);
            }
            Ok(total)
        })
        .collect()
}

/// Difference of path scores for one candidate under two reference trajectories.
pub fn attribution_gap(
    traj_a: &Trajectory,
    traj_b: &Trajectory,
    z: ExampleRef<'_>,
    target: &RegularizedObjective<'_>,
) -> Result<f64> {
    Ok(path_score(traj_a, z, target)? - path_score(traj_b, z, target)?)
}
