use nalgebra::{DMatrix, DVector};

use super::{logit, sigmoid, softplus, GradSample};
use crate::error::{Error, Result};
use crate::linalg::{ParamVector, SymMatrix};

/// Admissible range for the label probabilities unless overridden.
pub const P_RANGE: (f64, f64) = (0.6, 0.8);

/// Logistic regression on one-hot inputs with square parameterization:
/// input `e_i` arrives with probability `ν_i`, the label is Bernoulli(`P_i`)
/// and the model predicts `σ(θ_i²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamLogisticModel {
    nu: DVector<f64>,
    p: DVector<f64>,
}

impl ReparamLogisticModel {
    /// `ν` must be a strictly positive probability vector and every `P_i`
    /// must lie in `[0.6, 0.8]`.
    pub fn new(nu: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        Self::build(nu, p, false)
    }

    /// Like [`ReparamLogisticModel::new`] but only requires `0.5 < P_i < 1`.
    pub fn new_unrestricted(nu: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        Self::build(nu, p, true)
    }

    fn build(nu: DVector<f64>, p: DVector<f64>, any_p: bool) -> Result<Self> {
        if nu.len() != p.len() || nu.is_empty() {
            return Err(Error::shape(nu.len(), p.len()));
        }
        if nu.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("ν must be strictly positive".into()));
        }
        let total: f64 = nu.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("ν sums to {total}, not 1")));
        }
        for &pi in p.iter() {
            let ok = if any_p {
                pi > 0.5 && pi < 1.0
            } else {
                (P_RANGE.0..=P_RANGE.1).contains(&pi)
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "label probability {pi} outside the admissible range"
                )));
            }
        }
        Ok(ReparamLogisticModel { nu, p })
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    pub fn nu(&self) -> &DVector<f64> {
        &self.nu
    }

    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }

    /// `κ(ν) = ν_max / ν_min`.
    pub fn kappa(&self) -> f64 {
        self.nu.max() / self.nu.min()
    }

    /// Positive root `θ*_i = √(σ⁻¹(P_i))`.
    pub fn optimum(&self) -> ParamVector {
        self.p.map(|pi| logit(pi).sqrt())
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::shape(self.dim(), theta.len()));
        }
        Ok(())
    }
}

/// Population cross-entropy `−Σ ν_i [P_i ln σ(θ_i²) + (1 − P_i) ln(1 − σ(θ_i²))]`.
pub fn logistic_loss(m: &ReparamLogisticModel, theta: &ParamVector) -> Result<f64> {
    m.check(theta)?;
    let mut loss = 0.0;
    for i in 0..m.dim() {
        let z = theta[i] * theta[i];
        loss += m.nu[i] * (m.p[i] * softplus(-z) + (1.0 - m.p[i]) * softplus(z));
    }
    Ok(loss)
}

/// Population loss and gradient `g_i = 2ν_iθ_i(σ(θ_i²) − P_i)`.
pub fn logistic_loss_grad(m: &ReparamLogisticModel, theta: &ParamVector) -> Result<(f64, ParamVector)> {
    let loss = logistic_loss(m, theta)?;
    let grad = DVector::from_fn(m.dim(), |i, _| {
        2.0 * m.nu[i] * theta[i] * (sigmoid(theta[i] * theta[i]) - m.p[i])
    });
    Ok((loss, grad))
}

/// Diagonal of the Gauss-Newton matrix, `4ν_iθ_i²σ(θ_i²)(1 − σ(θ_i²))`.
pub fn logistic_gn_diag_vec(m: &ReparamLogisticModel, theta: &ParamVector) -> Result<DVector<f64>> {
    m.check(theta)?;
    Ok(DVector::from_fn(m.dim(), |i, _| {
        let s = sigmoid(theta[i] * theta[i]);
        4.0 * m.nu[i] * theta[i] * theta[i] * s * (1.0 - s)
    }))
}

/// [`logistic_gn_diag_vec`] as a diagonal matrix.
pub fn logistic_gn_diag(m: &ReparamLogisticModel, theta: &ParamVector) -> Result<SymMatrix> {
    let diag = logistic_gn_diag_vec(m, theta)?;
    SymMatrix::new(DMatrix::from_diagonal(&diag))
}

/// Gradient of the cross-entropy on one example `(e_i, y)`; supported on
/// coordinate `i` with value `2θ_i(σ(θ_i²) − y)`.
pub fn logistic_sample_grad(m: &ReparamLogisticModel, theta: &ParamVector, i: usize, y: u8) -> Result<GradSample> {
    m.check(theta)?;
    if i >= m.dim() {
        return Err(Error::InvalidInput(format!(
            "coordinate {i} out of range for dimension {}",
            m.dim()
        )));
    }
    if y > 1 {
        return Err(Error::InvalidInput(format!("label {y} is not binary")));
    }
    let z = theta[i] * theta[i];
    let y = f64::from(y);
    let mut grad = DVector::zeros(m.dim());
    grad[i] = 2.0 * theta[i] * (sigmoid(z) - y);
    let loss = y * softplus(-z) + (1.0 - y) * softplus(z);
    Ok(GradSample { grad, loss })
}
