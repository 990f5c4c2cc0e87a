//! Closed-form oracles for the quadratic and logistic analyses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, ParamVector, SymMatrix};
use crate::models::{logit, sigmoid};
use crate::preconditioner::BasisSpec;

/// Slack tolerance used by the PSD-ordering checks.
pub const SLACK_TOL: f64 = 1e-10;

/// Constant `c` of the one-dimensional divergence threshold, calibrated with
/// [`calibrate_divergence_constant`] on [`CALIBRATION_P`] × [`CALIBRATION_THETA0`]
/// × [`CALIBRATION_EPS`] and rounded up.
pub const DIVERGENCE_CONSTANT: f64 = 7.7;

pub const CALIBRATION_P: [f64; 3] = [0.6, 0.7, 0.8];
pub const CALIBRATION_THETA0: [f64; 3] = [0.05, 0.1, 0.3];
pub const CALIBRATION_EPS: [f64; 2] = [0.0, 1e-4];
/// Multiples of the threshold at which divergence must be observed.
pub const CALIBRATION_MULTIPLIERS: [f64; 11] = [1.0, 1.01, 1.1, 1.5, 2.0, 3.0, 5.0, 10.0, 30.0, 100.0, 1000.0];

fn same_dim(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.dim(), b.dim()));
    }
    Ok(())
}

/// `E[ggᵀ] = 2ΣWΣ + Tr(ΣW)Σ` for `g = (Δᵀx)x`, `x ~ N(0, Σ)`, `W = ΔΔᵀ`.
pub fn wick_second_moment(sigma: &SymMatrix, w: &SymMatrix) -> Result<SymMatrix> {
    same_dim(sigma, w)?;
    let s = sigma.as_matrix();
    let sw = s * w.as_matrix();
    SymMatrix::new(&sw * s * 2.0 + s * sw.trace())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichReport {
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// Smallest eigenvalue of `½E[ggᵀ] − ℓΣ`.
    pub lower_min_slack: f64,
    /// Smallest eigenvalue of `3ℓΣ − ½E[ggᵀ]`.
    pub upper_min_slack: f64,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.lower_ok && self.upper_ok
    }
}

fn delta_outer(theta: &ParamVector, theta_star: &ParamVector) -> Result<(ParamVector, SymMatrix)> {
    if theta.len() != theta_star.len() {
        return Err(Error::shape(theta_star.len(), theta.len()));
    }
    let delta = theta - theta_star;
    let w = SymMatrix::new(&delta * delta.transpose())?;
    Ok((delta, w))
}

/// Checks `ℓΣ ⪯ ½E[ggᵀ] ⪯ 3ℓΣ` through the Wick closed form.
pub fn check_fisher_sandwich(sigma: &SymMatrix, theta: &ParamVector, theta_star: &ParamVector) -> Result<SandwichReport> {
    if sigma.dim() != theta.len() {
        return Err(Error::shape(sigma.dim(), theta.len()));
    }
    let (_, w) = delta_outer(theta, theta_star)?;
    let loss = 0.5 * (sigma.as_matrix() * w.as_matrix()).trace();
    let half_m = wick_second_moment(sigma, &w)?.into_inner() * 0.5;
    let s = sigma.as_matrix();
    let lower = SymMatrix::new(&half_m - s * loss)?.min_eigenvalue();
    let upper = SymMatrix::new(s * (3.0 * loss) - &half_m)?.min_eigenvalue();
    Ok(SandwichReport {
        lower_ok: lower >= -SLACK_TOL,
        upper_ok: upper >= -SLACK_TOL,
        lower_min_slack: lower,
        upper_min_slack: upper,
    })
}

/// `A = P^{1/2}ΣP^{1/2}` with its per-step factor and `κ_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateBound {
    pub a: SymMatrix,
    /// `1 − λ_min(A) / (3 Tr A)`.
    pub factor: f64,
    /// `Tr A / λ_min(A)`.
    pub kappa_s: f64,
}

pub fn rate_bound(p: &SymMatrix, sigma: &SymMatrix) -> Result<RateBound> {
    same_dim(p, sigma)?;
    let p_eig = sym_eig(p);
    if !(p_eig.eigenvalues[0] > 0.0) {
        return Err(Error::Singular("preconditioner is not positive definite".into()));
    }
    let root = p_eig.reconstruct_with(&p_eig.eigenvalues.map(f64::sqrt));
    let a = SymMatrix::new(root.as_matrix() * sigma.as_matrix() * root.as_matrix())?;
    let lmin = a.min_eigenvalue();
    if !(lmin > 0.0) {
        return Err(Error::Singular("preconditioned matrix is singular".into()));
    }
    let tr = a.trace();
    Ok(RateBound {
        factor: 1.0 - lmin / (3.0 * tr),
        kappa_s: tr / lmin,
        a,
    })
}

/// Comparison of a predicted and a measured per-step factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub predicted_factor: f64,
    pub measured_factor: f64,
    pub relative_gap: f64,
}

impl RateReport {
    pub fn new(predicted_factor: f64, measured_factor: f64) -> Result<Self> {
        if !(predicted_factor > 0.0 && predicted_factor <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "predicted factor {predicted_factor} outside (0, 1]"
            )));
        }
        Ok(RateReport {
            predicted_factor,
            measured_factor,
            relative_gap: (measured_factor - predicted_factor).abs() / predicted_factor,
        })
    }
}

/// Per-step expected-loss factor of single-sample GN⁻¹ in the eigenbasis,
/// in the published form `1 − 2η + 2η²(d + 1)`.
pub fn gn1_expected_loss_factor(d: usize, eta: f64) -> f64 {
    1.0 - 2.0 * eta + 2.0 * eta * eta * (d as f64 + 1.0)
}

/// The same factor from the exact recursion: with `z ~ N(0, I)` and
/// `E[(uᵀz)²‖z‖²] = (d + 2)‖u‖²`, it is `1 − 2η + η²(d + 2)`.
pub fn gn1_exact_loss_factor(d: usize, eta: f64) -> f64 {
    1.0 - 2.0 * eta + eta * eta * (d as f64 + 2.0)
}

/// `1 / (2λ_max(A) + Tr A)`.
pub fn optimal_general_lr(a: &SymMatrix) -> Result<f64> {
    let lmax = a.max_eigenvalue();
    if !(lmax > 0.0) {
        return Err(Error::InvalidInput("matrix is zero (or not PSD)".into()));
    }
    Ok(1.0 / (2.0 * lmax + a.trace()))
}

fn condition_number(s: &SymMatrix) -> f64 {
    let e = sym_eig(s).eigenvalues;
    e[e.len() - 1] / e[0]
}

/// Condition number of `Σ^{1/2} diag(Σ)^{−p} Σ^{1/2}`, computed through the
/// similar matrix `diag(Σ)^{−p/2} Σ diag(Σ)^{−p/2}`.
pub fn preconditioned_condition(sigma: &SymMatrix, p: f64) -> Result<f64> {
    let diag = sigma.diagonal();
    if let Some(v) = diag.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidInput(format!("non-positive diagonal entry {v}")));
    }
    let scale = diag.map(|v| v.powf(p / 2.0));
    let s = sigma.as_matrix();
    let m = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| scale[i] * s[(i, j)] * scale[j]);
    Ok(condition_number(&SymMatrix::new(m)?))
}

/// `r(Σ) = κ(GN⁻¹-preconditioned) / κ(GN^{−1/2}-preconditioned)`, both in
/// the identity basis. `r > 1` favours power −1/2.
pub fn condition_ratio(sigma: &SymMatrix) -> Result<f64> {
    Ok(preconditioned_condition(sigma, -1.0)? / preconditioned_condition(sigma, -0.5)?)
}

/// One regularized GN step on a single logistic coordinate,
/// `θ − η·2θ(σ(θ²) − P) / (4θ²σ(θ²)(1 − σ(θ²)) + ε)`.
pub fn gn_1d_map(theta: f64, eta: f64, eps: f64, p: f64) -> Result<f64> {
    if eps == 0.0 && theta == 0.0 {
        return Err(Error::Singular("θ = 0 with ε = 0".into()));
    }
    let s = sigmoid(theta * theta);
    let num = 2.0 * theta * (s - p);
    let den = 4.0 * theta * theta * s * (1.0 - s) + eps;
    Ok(theta - eta * num / den)
}

/// `c·√(ln(1/θ₀))·(θ₀ + ε/θ₀)`; requires `σ(θ₀²) ≤ 0.55`.
pub fn divergence_threshold(theta0: f64, eps: f64, c: f64) -> Result<f64> {
    if !(theta0 > 0.0) || sigmoid(theta0 * theta0) > 0.55 {
        return Err(Error::InvalidInput(format!(
            "θ₀ = {theta0} outside 0 < θ₀ with σ(θ₀²) ≤ 0.55"
        )));
    }
    if !(c > 0.0) || !(eps >= 0.0) {
        return Err(Error::InvalidInput("c must be positive and ε nonnegative".into()));
    }
    Ok(c * (1.0 / theta0).ln().sqrt() * (theta0 + eps / theta0))
}

/// Iterates of [`gn_1d_map`] from `θ₀` at constant `η`. Stops early once
/// an iterate is non-finite (it is kept) or the map is singular.
pub fn iterate_1d(theta0: f64, eta: f64, eps: f64, p: f64, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(theta0);
    let mut theta = theta0;
    for _ in 0..steps {
        match gn_1d_map(theta, eta, eps, p) {
            Ok(next) => {
                out.push(next);
                if !next.is_finite() {
                    break;
                }
                theta = next;
            }
            Err(_) => break,
        }
    }
    out
}

/// Whether `|θ_{t+1}| ≥ √2|θ_t|` for `t ∈ [1, last]`. A trajectory that
/// overflows counts as diverged.
pub fn diverges_geometrically(traj: &[f64], last: usize) -> bool {
    for t in 1..=last {
        match (traj.get(t), traj.get(t + 1)) {
            (Some(a), _) if !a.is_finite() => return true,
            (Some(_), Some(b)) if !b.is_finite() => return true,
            (Some(a), Some(b)) => {
                if b.abs() < std::f64::consts::SQRT_2 * a.abs() {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Whether every grid cell diverges at every multiple of the threshold
/// computed with constant `c`.
pub fn divergence_holds_on_grid(c: f64) -> bool {
    for &p in &CALIBRATION_P {
        for &theta0 in &CALIBRATION_THETA0 {
            for &eps in &CALIBRATION_EPS {
                let Ok(base) = divergence_threshold(theta0, eps, c) else {
                    return false;
                };
                for &mult in &CALIBRATION_MULTIPLIERS {
                    let traj = iterate_1d(theta0, base * mult, eps, p, 11);
                    if !diverges_geometrically(&traj, 10) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Smallest `c` (to within `tol`, searched in `[lo, hi]`) for which
/// [`divergence_holds_on_grid`] holds at `c` and on a fine scan above it.
pub fn calibrate_divergence_constant(lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let holds_above = |c: f64| (0..=20).all(|k| divergence_holds_on_grid(c * (1.0 + 0.05 * k as f64)));
    if !holds_above(hi) {
        return Err(Error::InvalidInput(format!("divergence not observed even at c = {hi}")));
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if holds_above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `max_i |1 − η∞ λ_i / (λ_i + ε/ν_i)|` over the diagonal of `gn_star`.
/// A coordinate with `λ_i = 0` and `ε = 0` does not contract.
pub fn contraction_factor(gn_star: &SymMatrix, nu: &DVector<f64>, eta_inf: f64, eps: f64) -> Result<f64> {
    let lam = gn_star.diagonal();
    if lam.len() != nu.len() {
        return Err(Error::shape(lam.len(), nu.len()));
    }
    let mut gamma: f64 = 0.0;
    for (l, n) in lam.iter().zip(nu.iter()) {
        let den = l + eps / n;
        let ratio = if den == 0.0 { 0.0 } else { l / den };
        gamma = gamma.max((1.0 - eta_inf * ratio).abs());
    }
    Ok(gamma)
}

/// Largest final step size compatible with convergence from
/// `θ₀ = (1/√d)·1`: the divergence threshold at the coordinate with the
/// largest `ν_i` (regularization `ε/ν_max`).
pub fn eta_inf_bound(d: usize, nu_max: f64, eps: f64, c: f64) -> Result<f64> {
    divergence_threshold(1.0 / (d as f64).sqrt(), eps / nu_max, c)
}

/// `1 − c′√(ln d)·max(1/√d, √(d/κ))`.
pub fn contraction_lower_bound(d: usize, kappa: f64, c_prime: f64) -> f64 {
    let d = d as f64;
    1.0 - c_prime * d.ln().sqrt() * (1.0 / d.sqrt()).max((d / kappa).sqrt())
}

/// Constant `c′` for [`contraction_lower_bound`] given the divergence
/// constant and a uniform label probability: `c·(1 + 4σ⁻¹(P)P(1 − P))`.
pub fn contraction_constant(c: f64, p: f64) -> f64 {
    c * (1.0 + 4.0 * logit(p) * p * (1.0 - p))
}

/// Per-coordinate check of `(1/√(3ℓ))·D_GN ≤ (½E[g̃_i²])^{−1/2} ≤ (1/√ℓ)·D_GN`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamGnRatioReport {
    pub loss: f64,
    /// `(u_iᵀΣu_i)^{−1/2}`.
    pub d_gn: DVector<f64>,
    /// `(u_iᵀE[ggᵀ]u_i)^{−1/2}`.
    pub d_adam: DVector<f64>,
    /// `(½u_iᵀE[ggᵀ]u_i)^{−1/2} − D_GN/√(3ℓ)`.
    pub lower_slack: DVector<f64>,
    /// `D_GN/√ℓ − (½u_iᵀE[ggᵀ]u_i)^{−1/2}`.
    pub upper_slack: DVector<f64>,
    pub all_ok: bool,
}

impl AdamGnRatioReport {
    pub fn min_slack(&self) -> f64 {
        self.lower_slack.min().min(self.upper_slack.min())
    }
}

/// Compares Adam's exact full-expectation diagonal with `GN^{−1/2}` in
/// `basis`. `ℓ = 0` is excluded and reported as invalid input.
///
/// "½D_A" is read as the scaling built from `½E[ggᵀ]`, i.e.
/// `(½E[g̃_i²])^{−1/2} = √2·D_A`; this is the form that follows from the
/// sandwich `ℓΣ ⪯ ½E[ggᵀ] ⪯ 3ℓΣ`.
pub fn adam_gn_ratio_check(sigma: &SymMatrix, theta: &ParamVector, theta_star: &ParamVector, basis: &BasisSpec) -> Result<AdamGnRatioReport> {
    let (_, w) = delta_outer(theta, theta_star)?;
    if sigma.dim() != theta.len() {
        return Err(Error::shape(sigma.dim(), theta.len()));
    }
    let loss = 0.5 * (sigma.as_matrix() * w.as_matrix()).trace();
    if !(loss > 0.0) {
        return Err(Error::InvalidInput("ℓ = 0: the ratio is undefined at the optimum".into()));
    }
    let m = wick_second_moment(sigma, &w)?;
    let n = sigma.dim();
    let u = basis.to_dense(n);
    let mut d_gn = DVector::zeros(n);
    let mut d_adam = DVector::zeros(n);
    let mut lower_slack = DVector::zeros(n);
    let mut upper_slack = DVector::zeros(n);
    for i in 0..n {
        let col = u.column(i).into_owned();
        let s_ii = rotate_quadratic(&col, sigma.as_matrix());
        let m_ii = rotate_quadratic(&col, m.as_matrix());
        d_gn[i] = s_ii.powf(-0.5);
        d_adam[i] = m_ii.powf(-0.5);
        let half = (0.5 * m_ii).powf(-0.5);
        lower_slack[i] = half - d_gn[i] / (3.0 * loss).sqrt();
        upper_slack[i] = d_gn[i] / loss.sqrt() - half;
    }
    // Relative tolerance: the quantities scale like ℓ^{−1/2}.
    let tol = SLACK_TOL * d_gn.amax() / loss.sqrt();
    let all_ok = lower_slack.iter().chain(upper_slack.iter()).all(|&s| s >= -tol.max(SLACK_TOL));
    Ok(AdamGnRatioReport {
        loss,
        d_gn,
        d_adam,
        lower_slack,
        upper_slack,
        all_ok,
    })
}

fn rotate_quadratic(u: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    u.dot(&(m * u))
}

/// `E[g̃_i²]` for the rotated single-sample gradient, via the Wick moment.
pub fn rotated_second_moment(sigma: &SymMatrix, delta: &ParamVector, basis: &BasisSpec) -> Result<DVector<f64>> {
    let w = SymMatrix::new(delta * delta.transpose())?;
    let m = wick_second_moment(sigma, &w)?;
    let u = basis.to_dense(sigma.dim());
    Ok(DVector::from_fn(sigma.dim(), |i, _| {
        let col = u.column(i).into_owned();
        rotate_quadratic(&col, m.as_matrix())
    }))
}
