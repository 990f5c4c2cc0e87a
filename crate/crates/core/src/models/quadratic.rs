use nalgebra::{DMatrix, DVector};

use super::GradSample;
use crate::error::{Error, Result};
use crate::linalg::{ParamVector, SymMatrix};

/// Linear regression with Gaussian inputs, loss `½ E[((θ − θ*)ᵀx)²]`.
///
/// The covariance only has to be PSD: the block covariance used in the
/// auto-tuning experiment is singular.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    cov: SymMatrix,
    theta_star: ParamVector,
}

impl QuadraticModel {
    pub fn new(cov: SymMatrix, theta_star: ParamVector) -> Result<Self> {
        if cov.dim() != theta_star.len() {
            return Err(Error::shape(cov.dim(), theta_star.len()));
        }
        if !cov.is_psd() {
            return Err(Error::InvalidInput("covariance is not PSD".into()));
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite optimum".into()));
        }
        Ok(QuadraticModel { cov, theta_star })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn theta_star(&self) -> &ParamVector {
        &self.theta_star
    }

    fn delta(&self, theta: &ParamVector) -> Result<ParamVector> {
        if theta.len() != self.dim() {
            return Err(Error::shape(self.dim(), theta.len()));
        }
        Ok(theta - &self.theta_star)
    }

    /// `½ ΔᵀΣΔ`.
    pub fn loss(&self, theta: &ParamVector) -> Result<f64> {
        let delta = self.delta(theta)?;
        Ok(0.5 * delta.dot(&(self.cov.as_matrix() * &delta)))
    }
}

/// Population gradient `Σ(θ − θ*)` and loss `½ ΔᵀΣΔ`.
pub fn quad_population_grad(m: &QuadraticModel, theta: &ParamVector) -> Result<GradSample> {
    let delta = m.delta(theta)?;
    let grad = m.cov.as_matrix() * &delta;
    let loss = 0.5 * delta.dot(&grad);
    Ok(GradSample { grad, loss })
}

/// Single-sample gradient `((θ − θ*)ᵀx)·x` with loss `½((θ − θ*)ᵀx)²`.
pub fn quad_sample_grad(m: &QuadraticModel, theta: &ParamVector, x: &DVector<f64>) -> Result<GradSample> {
    let delta = m.delta(theta)?;
    if x.len() != delta.len() {
        return Err(Error::shape(delta.len(), x.len()));
    }
    let r = delta.dot(x);
    Ok(GradSample {
        grad: x * r,
        loss: 0.5 * r * r,
    })
}

/// Mean of [`quad_sample_grad`] over the rows of `xs`.
pub fn quad_batch_grad(m: &QuadraticModel, theta: &ParamVector, xs: &DMatrix<f64>) -> Result<GradSample> {
    let delta = m.delta(theta)?;
    if xs.ncols() != delta.len() || xs.nrows() == 0 {
        return Err(Error::shape(
            format!("nonempty batch with {} columns", delta.len()),
            format!("{}x{}", xs.nrows(), xs.ncols()),
        ));
    }
    let b = xs.nrows() as f64;
    let residual = xs * &delta;
    let grad = xs.tr_mul(&residual) / b;
    let loss = 0.5 * residual.norm_squared() / b;
    Ok(GradSample { grad, loss })
}

/// The Gauss-Newton matrix of the quadratic, which is `Σ` itself.
pub fn quad_gn(m: &QuadraticModel) -> SymMatrix {
    m.cov.clone()
}
