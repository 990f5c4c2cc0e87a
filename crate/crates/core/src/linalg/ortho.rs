//! Matrix logarithm and exponential on the rotation group.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{sym_eig, OrthoMatrix, SymMatrix};
use crate::error::{Error, Result};

/// Tolerance on `K + Kᵀ` accepted by [`SkewMatrix::new`].
pub const SKEW_TOL: f64 = 1e-9;

/// Rotation angles within this distance of π are rejected by [`ortho_log`].
pub const NEAR_PI_TOL: f64 = 1e-8;

/// A real skew-symmetric matrix, `K = −Kᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    /// Accepts `m` when `‖m + mᵀ‖_max ≤ 1e−9`, then stores `(m − mᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::shape(
                "non-empty square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        let asym = (&m + m.transpose()).amax();
        if !(asym <= SKEW_TOL) {
            return Err(Error::InvalidInput(format!(
                "matrix is not skew-symmetric (max |K + Kᵀ| = {asym:e})"
            )));
        }
        Ok(SkewMatrix((&m - m.transpose()) * 0.5))
    }

    pub fn zeros(dim: usize) -> Self {
        SkewMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, alpha: f64) -> SkewMatrix {
        SkewMatrix(&self.0 * alpha)
    }
}

// φ / sin φ as a function of c = cos φ, for φ ∈ [0, π).
fn angle_over_sine(c: f64) -> f64 {
    let c = c.clamp(-1.0, 1.0);
    let gap = 1.0 - c;
    if gap < 1e-6 {
        // φ² ≈ 2(1 − c) + (1 − c)²/3, φ/sinφ ≈ 1 + φ²/6 + 7φ⁴/360
        1.0 + gap / 3.0 + 2.0 * gap * gap / 15.0
    } else {
        c.acos() / (1.0 - c * c).sqrt()
    }
}

/// Principal logarithm of a rotation.
///
/// For orthogonal `U` the symmetric part `S = (U + Uᵀ)/2` and skew part
/// `A = (U − Uᵀ)/2` commute, and on each invariant plane `S = cos φ`,
/// `A = sin φ·J`. So `log U = A·g(S)` with `g(cos φ) = φ / sin φ`.
pub fn ortho_log(u: &OrthoMatrix) -> Result<SkewMatrix> {
    let m = u.as_matrix();
    let n = u.dim();
    let det = u.determinant();
    if det < 0.0 {
        return Err(Error::NonInterpolable(format!(
            "determinant {det:.3} is negative (reflection); flip one column sign first"
        )));
    }
    let s = SymMatrix::new((m + m.transpose()) * 0.5)?;
    let a = (m - m.transpose()) * 0.5;
    let eig = sym_eig(&s);
    if let Some(&c) = eig.eigenvalues.iter().next() {
        let angle = c.clamp(-1.0, 1.0).acos();
        if PI - angle < NEAR_PI_TOL {
            return Err(Error::NonInterpolable(format!(
                "rotation angle {angle} is at π (eigenvalue −1)"
            )));
        }
    }
    let g = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&c| angle_over_sine(c)));
    let g_of_s = eig.reconstruct_with(&g);
    let k = a * g_of_s.as_matrix();
    Ok(SkewMatrix((&k - k.transpose()) * 0.5))
}

/// `exp(K)` for skew-symmetric `K`.
///
/// With `Φ = √(−K²)` (symmetric PSD), `exp(K) = cos Φ + K·sinc Φ`.
pub fn exp_skew(k: &SkewMatrix) -> OrthoMatrix {
    let km = k.as_matrix();
    let neg_sq = SymMatrix::new(km.transpose() * km).expect("KᵀK of a finite matrix is finite");
    let eig = sym_eig(&neg_sq);
    let mut cos_vals = DVector::zeros(k.dim());
    let mut sinc_vals = DVector::zeros(k.dim());
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let phi = lam.max(0.0).sqrt();
        cos_vals[i] = phi.cos();
        sinc_vals[i] = if phi < 1e-6 {
            1.0 - phi * phi / 6.0
        } else {
            phi.sin() / phi
        };
    }
    let cos_part = eig.reconstruct_with(&cos_vals).into_inner();
    let sinc_part = eig.reconstruct_with(&sinc_vals).into_inner();
    OrthoMatrix::from_trusted(cos_part + km * sinc_part)
}

/// Point at fraction `alpha` along the geodesic from `I` to `U`,
/// `exp(α·log U)`, re-orthonormalized. The endpoints are returned exactly.
pub fn geodesic_interp(u: &OrthoMatrix, alpha: f64) -> Result<OrthoMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "interpolation fraction {alpha} outside [0, 1]"
        )));
    }
    let log = ortho_log(u)?;
    if alpha == 0.0 {
        return Ok(OrthoMatrix::identity(u.dim()));
    }
    if alpha == 1.0 {
        return Ok(u.clone());
    }
    let raw = exp_skew(&log.scaled(alpha));
    OrthoMatrix::nearest(raw.into_inner())
}
