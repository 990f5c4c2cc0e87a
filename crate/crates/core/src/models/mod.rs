//! Model families with exact losses, gradients and Gauss-Newton matrices.

mod logistic;
mod mlp;
mod quadratic;

pub use logistic::{
    logistic_gn_diag, logistic_gn_diag_vec, logistic_loss, logistic_loss_grad,
    logistic_sample_grad, ReparamLogisticModel,
};
pub use mlp::{
    kron_factors_from_samples, mlp_forward_backward, mlp_gn_kron, Activation, MlpCurvature,
    MlpModel, MlpParams,
};
pub use quadratic::{
    quad_batch_grad, quad_gn, quad_population_grad, quad_sample_grad, QuadraticModel,
};

use crate::linalg::ParamVector;

/// A gradient together with the loss it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub grad: ParamVector,
    pub loss: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eᶻ)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
