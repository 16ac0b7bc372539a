//! Logistic loss, empirical risks, gradients and Hessians.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{ExampleRef, LabeledDataset};
use crate::error::{Error, Result};

/// Model parameters θ.
pub type ParamVector = DVector<f64>;

/// `1 / (1 + e^{-t})` without overflow for large `|t|`.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` branching on the sign of `t`.
#[inline]
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Logistic loss as a function of the margin `y⟨x, θ⟩`.
#[inline]
pub fn margin_loss(margin: f64) -> f64 {
    log1p_exp(-margin)
}

#[inline]
pub fn dot_row(theta: &[f64], x: &[f64]) -> f64 {
    theta.iter().zip(x).map(|(a, b)| a * b).sum()
}

pub(crate) fn check_finite(theta: &ParamVector, what: &str) -> Result<()> {
    if theta.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidNumeric(format!(
            "{what} has non-finite entries"
        )))
    }
}

fn check_dim(theta: &ParamVector, d: usize) -> Result<()> {
    if theta.len() != d {
        return Err(Error::config(format!(
            "parameter dimension {} does not match data dimension {d}",
            theta.len()
        )));
    }
    Ok(())
}

/// `ℓ(θ; z) = ln(1 + exp(−y⟨x, θ⟩))`.
pub fn loss(theta: &ParamVector, z: ExampleRef<'_>) -> Result<f64> {
    check_dim(theta, z.features.len())?;
    let m = z.y() * dot_row(theta.as_slice(), z.features);
    if m.is_nan() {
        return Err(Error::InvalidNumeric("NaN margin in loss".into()));
    }
    Ok(margin_loss(m))
}

/// `∇_θ ℓ(θ; z) = −y σ(−y⟨x, θ⟩) x`.
pub fn loss_grad(theta: &ParamVector, z: ExampleRef<'_>) -> Result<ParamVector> {
    check_dim(theta, z.features.len())?;
    let y = z.y();
    let m = y * dot_row(theta.as_slice(), z.features);
    if m.is_nan() {
        return Err(Error::InvalidNumeric("NaN margin in loss gradient".into()));
    }
    let c = -y * sigmoid(-m);
    Ok(ParamVector::from_iterator(
        z.features.len(),
        z.features.iter().map(|x| c * x),
    ))
}

/// A twice-differentiable training objective `L(θ; w) = Σ_j w_j ℓ(θ; z_j) + reg(θ)`.
///
/// `example_gradient(θ, i)` is `∂/∂w_i ∇_θ L`, i.e. the gradient of example `i`'s loss.
pub trait SmoothObjective: Sync {
    fn dim(&self) -> usize;
    fn num_examples(&self) -> usize;
    fn value(&self, theta: &ParamVector) -> Result<f64>;
    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector>;
    fn hessian(&self, theta: &ParamVector) -> Result<DMatrix<f64>>;
    fn example_gradient(&self, theta: &ParamVector, i: usize) -> Result<ParamVector>;
    /// A certified lower bound on the Hessian spectrum; zero when none is known.
    fn strong_convexity(&self) -> f64;
    fn tag(&self) -> String;
}

/// Weighted logistic risk over a dataset plus `(l2_coeff / 2)‖θ‖²`.
///
/// Weights are per-example multipliers on the loss. Without explicit weights every
/// example gets `1/n`, which makes the data term the plain mean.
#[derive(Debug, Clone)]
pub struct RegularizedObjective<'a> {
    dataset: &'a LabeledDataset,
    l2_coeff: f64,
    weights: Option<Vec<f64>>,
}

impl<'a> RegularizedObjective<'a> {
    pub fn new(dataset: &'a LabeledDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::config("objective over an empty dataset"));
        }
        Ok(Self {
            dataset,
            l2_coeff: 0.0,
            weights: None,
        })
    }

    pub fn with_l2(mut self, l2_coeff: f64) -> Result<Self> {
        if !(l2_coeff.is_finite() && l2_coeff >= 0.0) {
            return Err(Error::config(format!("l2_coeff {l2_coeff} must be ≥ 0")));
        }
        self.l2_coeff = l2_coeff;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.dataset.len() {
            return Err(Error::config(format!(
                "{} weights for {} examples",
                weights.len(),
                self.dataset.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("example weights must be finite and ≥ 0"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn dataset(&self) -> &'a LabeledDataset {
        self.dataset
    }

    pub fn l2_coeff(&self) -> f64 {
        self.l2_coeff
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.dataset.len() as f64,
        }
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        check_dim(theta, self.dataset.dim())?;
        check_finite(theta, "theta")
    }
}

/// Weighted risk plus the ridge term.
pub fn risk(theta: &ParamVector, objective: &RegularizedObjective<'_>) -> Result<f64> {
    objective.check(theta)?;
    let ds = objective.dataset;
    let t = theta.as_slice();
    let mut total = 0.0;
    for i in 0..ds.len() {
        let m = f64::from(ds.labels()[i]) * dot_row(t, ds.row(i));
        total += objective.weight(i) * margin_loss(m);
    }
    total += 0.5 * objective.l2_coeff * theta.norm_squared();
    if !total.is_finite() {
        return Err(Error::InvalidNumeric("risk is not finite".into()));
    }
    Ok(total)
}

/// Exact gradient: `Σ_i w_i (−y_i σ(−y_i⟨x_i, θ⟩) x_i) + l2_coeff·θ`.
pub fn grad_risk(theta: &ParamVector, objective: &RegularizedObjective<'_>) -> Result<ParamVector> {
    objective.check(theta)?;
    let ds = objective.dataset;
    let t = theta.as_slice();
    let mut g = vec![0.0; ds.dim()];
    for i in 0..ds.len() {
        let x = ds.row(i);
        let y = f64::from(ds.labels()[i]);
        let c = -objective.weight(i) * y * sigmoid(-y * dot_row(t, x));
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += c * xj;
        }
    }
    let mut g = ParamVector::from_vec(g);
    if objective.l2_coeff != 0.0 {
        g.axpy(objective.l2_coeff, theta, 1.0);
    }
    check_finite(&g, "risk gradient")?;
    Ok(g)
}

/// Dense Hessian `Σ_i w_i σ'(⟨x_i, θ⟩) x_i x_iᵀ + l2_coeff·I`, exactly symmetric.
pub fn hessian_risk(
    theta: &ParamVector,
    objective: &RegularizedObjective<'_>,
) -> Result<DMatrix<f64>> {
    objective.check(theta)?;
    let ds = objective.dataset;
    let d = ds.dim();
    let t = theta.as_slice();
    let mut h = DMatrix::<f64>::zeros(d, d);
    for i in 0..ds.len() {
        let x = ds.row(i);
        let m = dot_row(t, x);
        let c = objective.weight(i) * sigmoid(m) * sigmoid(-m);
        for a in 0..d {
            let ca = c * x[a];
            for b in a..d {
                h[(a, b)] += ca * x[b];
            }
        }
    }
    for a in 0..d {
        h[(a, a)] += objective.l2_coeff;
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidNumeric("Hessian is not finite".into()));
    }
    Ok(h)
}

impl SmoothObjective for RegularizedObjective<'_> {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn num_examples(&self) -> usize {
        self.dataset.len()
    }

    fn value(&self, theta: &ParamVector) -> Result<f64> {
        risk(theta, self)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        grad_risk(theta, self)
    }

    fn hessian(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        hessian_risk(theta, self)
    }

    fn example_gradient(&self, theta: &ParamVector, i: usize) -> Result<ParamVector> {
        if i >= self.dataset.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.dataset.len(),
            });
        }
        loss_grad(theta, self.dataset.example(i))
    }

    fn strong_convexity(&self) -> f64 {
        self.l2_coeff
    }

    fn tag(&self) -> String {
        let p = self.dataset.provenance();
        if self.l2_coeff > 0.0 {
            format!("{}+l2={}", p.generator, self.l2_coeff)
        } else {
            p.generator.clone()
        }
    }
}
