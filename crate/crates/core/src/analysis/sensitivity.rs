//! Finite-time sensitivity of a gradient-descent trajectory to one example's weight,
//! and its equilibrium limit (the classical influence function).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ParamVector, SmoothObjective};
use crate::trainer::{train_gd, LrSchedule, Trajectory};

/// `v_t = ∂θ_t / ∂w_i` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityState {
    pub v: ParamVector,
    pub t: usize,
}

/// Propagates `v_{t+1} = v_t − η_t (H_t v_t + ∇ℓ(θ_t; z_i))` from `v_0 = 0` along the
/// checkpoints of `traj`. This is the exact derivative of the recorded gradient-descent
/// iterates with respect to `w_i`.
pub fn sensitivity_path<O: SmoothObjective + ?Sized>(
    objective: &O,
    traj: &Trajectory,
    i: usize,
) -> Result<Vec<SensitivityState>> {
    if traj.objective_tag() != objective.tag() {
        return Err(Error::Precondition(format!(
            "trajectory was produced by {:?}, not {:?}",
            traj.objective_tag(),
            objective.tag()
        )));
    }
    if traj.dim() != objective.dim() {
        return Err(Error::config(
            "trajectory and objective differ in dimension",
        ));
    }
    if i >= objective.num_examples() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: objective.num_examples(),
        });
    }
    let mut states = Vec::with_capacity(traj.steps() + 1);
    let mut v = ParamVector::zeros(traj.dim());
    states.push(SensitivityState { v: v.clone(), t: 0 });
    for (t, &eta) in traj.rates().iter().enumerate() {
        let theta = traj.checkpoint(t);
        let h = objective.hessian(theta)?;
        let g = objective.example_gradient(theta, i)?;
        let step = &h * &v + g;
        v.axpy(-eta, &step, 1.0);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                step: t + 1,
                reason: "sensitivity is not finite".into(),
            });
        }
        states.push(SensitivityState {
            v: v.clone(),
            t: t + 1,
        });
    }
    Ok(states)
}

/// Damped Newton iterations until `‖∇L‖ < tol`.
pub fn minimize_newton<O: SmoothObjective + ?Sized>(
    objective: &O,
    start: &ParamVector,
    tol: f64,
) -> Result<ParamVector> {
    let mut theta = start.clone();
    let mut value = objective.value(&theta)?;
    for _ in 0..200 {
        let g = objective.gradient(&theta)?;
        if g.norm() < tol {
            return Ok(theta);
        }
        let h = objective.hessian(&theta)?;
        let dir = h
            .cholesky()
            .ok_or_else(|| Error::Convergence("Hessian is not positive definite".into()))?
            .solve(&g);
        let mut step = 1.0;
        loop {
            let cand = &theta - &dir * step;
            let cv = objective.value(&cand)?;
            // near the optimum value differences drown in rounding; the gradient
            // norm still resolves progress there
            let progress = cv <= value || objective.gradient(&cand)?.norm() < g.norm();
            if progress || step < 1e-10 {
                theta = cand;
                value = cv;
                break;
            }
            step *= 0.5;
        }
    }
    let g = objective.gradient(&theta)?;
    if g.norm() < tol {
        Ok(theta)
    } else {
        Err(Error::Convergence(format!(
            "Newton stopped with gradient norm {:e}",
            g.norm()
        )))
    }
}

/// Trains `depth` constant-rate steps from zero, integrates the sensitivity of example
/// `i` along that run, and returns `‖v_T + H⁻¹∇ℓ(θ*; z_i)‖` with `H` the Hessian at
/// the exact optimum `θ*`.
pub fn influence_limit_check<O: SmoothObjective + ?Sized>(
    objective: &O,
    i: usize,
    depth: usize,
    rate: f64,
) -> Result<f64> {
    if objective.strong_convexity() <= 0.0 {
        return Err(Error::Precondition(
            "influence limit needs a strongly convex objective (λ > 0)".into(),
        ));
    }
    let theta0 = ParamVector::zeros(objective.dim());
    let optimum = minimize_newton(objective, &theta0, 1e-10)?;
    let h = objective.hessian(&optimum)?;
    let g = objective.example_gradient(&optimum, i)?;
    let classical = -h
        .cholesky()
        .ok_or_else(|| Error::Precondition("Hessian at the optimum is singular".into()))?
        .solve(&g);

    let traj = train_gd(&theta0, objective, &LrSchedule::constant(rate, depth)?)?;
    let path = sensitivity_path(objective, &traj, i)?;
    let v_t = &path.last().expect("v_0 always present").v;
    Ok((v_t - classical).norm())
}

/// `L(θ; w) = ½ θᵀAθ + Σ_j w_j ⟨g_j, θ⟩`: constant Hessian `A`, constant per-example
/// gradients `g_j`. Useful for checking sensitivity code against closed forms.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub curvature: DMatrix<f64>,
    pub linear_terms: Vec<ParamVector>,
    pub weights: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(curvature: DMatrix<f64>, linear_terms: Vec<ParamVector>) -> Result<Self> {
        if !curvature.is_square() {
            return Err(Error::config("curvature must be square"));
        }
        if linear_terms.iter().any(|g| g.len() != curvature.nrows()) {
            return Err(Error::config("linear term dimension mismatch"));
        }
        let n = linear_terms.len().max(1);
        Ok(Self {
            curvature,
            weights: vec![1.0 / n as f64; linear_terms.len()],
            linear_terms,
        })
    }
}

impl SmoothObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.curvature.nrows()
    }

    fn num_examples(&self) -> usize {
        self.linear_terms.len()
    }

    fn value(&self, theta: &ParamVector) -> Result<f64> {
        let lin: f64 = self
            .linear_terms
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| w * g.dot(theta))
            .sum();
        Ok(0.5 * theta.dot(&(&self.curvature * theta)) + lin)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        let mut g = &self.curvature * theta;
        for (gj, w) in self.linear_terms.iter().zip(&self.weights) {
            g.axpy(*w, gj, 1.0);
        }
        Ok(g)
    }

    fn hessian(&self, _theta: &ParamVector) -> Result<DMatrix<f64>> {
        Ok(self.curvature.clone())
    }

    fn example_gradient(&self, _theta: &ParamVector, i: usize) -> Result<ParamVector> {
        self.linear_terms
            .get(i)
            .cloned()
            .ok_or(Error::IndexOutOfRange {
                index: i,
                len: self.linear_terms.len(),
            })
    }

    fn strong_convexity(&self) -> f64 {
        self.curvature
            .clone()
            .symmetric_eigenvalues()
            .min()
            .max(0.0)
    }

    fn tag(&self) -> String {
        "quadratic".into()
    }
}
