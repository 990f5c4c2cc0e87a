//! Dense small-matrix primitives.
//!
//! Everything here works on `nalgebra` dynamic matrices in double precision.
//! The newtypes carry the invariants the optimizer relies on: [`SymMatrix`]
//! is exactly symmetric and finite, [`OrthoMatrix`] has orthonormal columns.

mod kron;
mod ortho;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use kron::{kron_eigenbasis, KronBasis, KronFactors};
pub use ortho::{exp_skew, geodesic_interp, ortho_log, SkewMatrix};

/// Flat model parameter vector.
pub type ParamVector = DVector<f64>;

/// Tolerance on `UᵀU − I` accepted by [`OrthoMatrix::new`].
pub const ORTHO_TOL: f64 = 1e-10;

/// Smallest eigenvalue tolerated for a matrix declared positive semidefinite.
pub const PSD_TOL: f64 = 1e-10;

/// A real symmetric matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates squareness and finiteness, then symmetrizes as `(S + Sᵀ)/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::shape(
                "square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Result<Self> {
        SymMatrix::new(DMatrix::from_diagonal(diag))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
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

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// True when every off-diagonal entry is exactly zero.
    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| i == j || self.0[(i, j)] == 0.0))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eig(self).eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let eig = sym_eig(self);
        eig.eigenvalues[eig.eigenvalues.len() - 1]
    }

    /// Checks positive semidefiniteness within [`PSD_TOL`] (scaled by the
    /// largest eigenvalue magnitude).
    pub fn is_psd(&self) -> bool {
        let eig = sym_eig(self);
        let scale = eig.eigenvalues.amax().max(1.0);
        eig.eigenvalues[0] >= -PSD_TOL * scale
    }

    /// Spectral power `S^p` of a PSD matrix. Eigenvalues at roundoff level
    /// (`≤ n·ε_mach·λ_max`) or below are taken as zero; negative powers of a
    /// zero eigenvalue are rejected as singular.
    pub fn psd_power(&self, p: f64) -> Result<SymMatrix> {
        let eig = sym_eig(self);
        let scale = eig.eigenvalues.amax().max(1.0);
        if eig.eigenvalues[0] < -PSD_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "matrix is not PSD (smallest eigenvalue {:e})",
                eig.eigenvalues[0]
            )));
        }
        let floor = self.dim() as f64 * f64::EPSILON * eig.eigenvalues.amax();
        let mut powered = DVector::zeros(self.dim());
        for (dst, &lam) in powered.iter_mut().zip(eig.eigenvalues.iter()) {
            let lam = if lam <= floor { 0.0 } else { lam };
            if lam == 0.0 && p < 0.0 {
                return Err(Error::Singular(
                    "negative power of a singular matrix".into(),
                ));
            }
            *dst = if p == 0.5 { lam.sqrt() } else { lam.powf(p) };
        }
        Ok(eig.reconstruct_with(&powered))
    }
}

/// A square matrix whose columns are orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoMatrix(DMatrix<f64>);

impl OrthoMatrix {
    /// Accepts `m` when `‖mᵀm − I‖_max < 1e−10`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::shape(
                "non-empty square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        let err = orthonormality_error(&m);
        if !(err < ORTHO_TOL) {
            return Err(Error::InvalidInput(format!(
                "columns are not orthonormal (max |UᵀU − I| = {err:e})"
            )));
        }
        Ok(OrthoMatrix(m))
    }

    pub fn identity(dim: usize) -> Self {
        OrthoMatrix(DMatrix::identity(dim, dim))
    }

    /// Projects `m` onto the nearest orthogonal matrix, `m (mᵀm)^{−1/2}`.
    pub fn nearest(m: DMatrix<f64>) -> Result<Self> {
        let gram = SymMatrix::new(m.transpose() * &m)?;
        let inv_sqrt = gram.psd_power(-0.5)?;
        OrthoMatrix::new(m * inv_sqrt.as_matrix())
    }

    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        OrthoMatrix(m)
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

    pub fn determinant(&self) -> f64 {
        self.0.clone().determinant()
    }

    /// Negates column `j`. The result is still orthonormal and
    /// `U D Uᵀ` is unchanged for any diagonal `D`.
    pub fn flip_column(&mut self, j: usize) {
        self.0.column_mut(j).neg_mut();
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }
}

fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let n = gram.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let e = (gram[(i, j)] - target).abs();
            if e.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(e);
        }
    }
    worst
}

/// Eigendecomposition `S = U diag(λ) Uᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    pub basis: OrthoMatrix,
}

impl SymEig {
    /// `U diag(values) Uᵀ` for caller-supplied spectral values.
    pub fn reconstruct_with(&self, values: &DVector<f64>) -> SymMatrix {
        let u = self.basis.as_matrix();
        let mut scaled = u.clone();
        for (j, &v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        let m = scaled * u.transpose();
        SymMatrix((&m + m.transpose()) * 0.5)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(&self.eigenvalues)
    }
}

/// Symmetric eigendecomposition.
///
/// Eigenvalues come back ascending. Each eigenvector is signed so that its
/// largest-magnitude entry (first one on ties) is positive, which makes the
/// output a deterministic function of the input bits. Exactly diagonal inputs
/// skip the iterative solver and return the sorting permutation.
pub fn sym_eig(s: &SymMatrix) -> SymEig {
    let n = s.dim();
    if s.is_diagonal() {
        let diag = s.diagonal();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]).then(a.cmp(&b)));
        let mut basis = DMatrix::zeros(n, n);
        let mut eigenvalues = DVector::zeros(n);
        for (col, &row) in order.iter().enumerate() {
            basis[(row, col)] = 1.0;
            eigenvalues[col] = diag[row];
        }
        return SymEig {
            eigenvalues,
            basis: OrthoMatrix(basis),
        };
    }

    let decomposition = s.0.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    let raw = &decomposition.eigenvalues;
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));

    let mut basis = DMatrix::zeros(n, n);
    let mut eigenvalues = DVector::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        eigenvalues[col] = raw[src];
        let v = decomposition.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis[(i, col)] = sign * v[i];
        }
    }
    SymEig {
        eigenvalues,
        basis: OrthoMatrix(basis),
    }
}

/// Frobenius norm of `a − b` divided by the Frobenius norm of `b`
/// (absolute when `b` is zero).
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let base = b.norm();
    if base == 0.0 {
        diff
    } else {
        diff / base
    }
}

/// Kronecker product of two dense matrices.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
