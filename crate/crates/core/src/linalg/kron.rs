//! Eigenstructure of Kronecker-factored curvature.

use nalgebra::{DMatrix, DVector};

use super::{sym_eig, OrthoMatrix, SymMatrix};
use crate::error::{Error, Result};

/// A pair `(L, R)` standing for `L ⊗ R`, with `L` of size m×m and `R` n×n.
#[derive(Debug, Clone, PartialEq)]
pub struct KronFactors {
    left: SymMatrix,
    right: SymMatrix,
}

impl KronFactors {
    /// Both factors must be PSD (smallest eigenvalue ≥ −1e−10, scaled).
    pub fn new(left: SymMatrix, right: SymMatrix) -> Result<Self> {
        for (name, f) in [("left", &left), ("right", &right)] {
            if !f.is_psd() {
                return Err(Error::InvalidCurvature(format!(
                    "{name} Kronecker factor is not PSD (smallest eigenvalue {:e})",
                    f.min_eigenvalue()
                )));
            }
        }
        Ok(KronFactors { left, right })
    }

    pub fn left(&self) -> &SymMatrix {
        &self.left
    }

    pub fn right(&self) -> &SymMatrix {
        &self.right
    }

    /// `(m, n)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.left.dim(), self.right.dim())
    }

    /// Dense `L ⊗ R`. Only for tests and small problems.
    pub fn materialize(&self) -> DMatrix<f64> {
        self.left.as_matrix().kronecker(self.right.as_matrix())
    }
}

/// Eigenbasis `U_L ⊗ U_R` kept in factored form.
///
/// An m×n gradient matrix `G` is rotated as `U_Lᵀ G U_R`. Flattened
/// row-major, entry `i·n + j` of the rotated gradient pairs with eigenvalue
/// `λ_i μ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KronBasis {
    left: OrthoMatrix,
    right: OrthoMatrix,
    left_eigenvalues: DVector<f64>,
    right_eigenvalues: DVector<f64>,
}

impl KronBasis {
    pub fn new(left: OrthoMatrix, right: OrthoMatrix) -> Self {
        let (m, n) = (left.dim(), right.dim());
        KronBasis {
            left,
            right,
            left_eigenvalues: DVector::zeros(m),
            right_eigenvalues: DVector::zeros(n),
        }
    }

    pub fn identity(m: usize, n: usize) -> Self {
        KronBasis::new(OrthoMatrix::identity(m), OrthoMatrix::identity(n))
    }

    pub fn left(&self) -> &OrthoMatrix {
        &self.left
    }

    pub fn right(&self) -> &OrthoMatrix {
        &self.right
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.left.dim(), self.right.dim())
    }

    pub fn len(&self) -> usize {
        self.left.dim() * self.right.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Products `λ_i μ_j` in row-major order (unsorted).
    pub fn eigenvalues(&self) -> DVector<f64> {
        let (m, n) = self.dims();
        DVector::from_fn(m * n, |k, _| {
            self.left_eigenvalues[k / n] * self.right_eigenvalues[k % n]
        })
    }

    /// Replaces the factor bases, e.g. with interpolated ones. Eigenvalues are kept.
    pub fn with_bases(&self, left: OrthoMatrix, right: OrthoMatrix) -> Result<Self> {
        if left.dim() != self.left.dim() || right.dim() != self.right.dim() {
            return Err(Error::shape(
                format!("{:?}", self.dims()),
                format!("({}, {})", left.dim(), right.dim()),
            ));
        }
        Ok(KronBasis {
            left,
            right,
            left_eigenvalues: self.left_eigenvalues.clone(),
            right_eigenvalues: self.right_eigenvalues.clone(),
        })
    }

    fn check(&self, g: &DMatrix<f64>) -> Result<()> {
        if g.shape() != self.dims() {
            return Err(Error::shape(
                format!("{}x{} gradient", self.left.dim(), self.right.dim()),
                format!("{}x{}", g.nrows(), g.ncols()),
            ));
        }
        Ok(())
    }

    /// `U_Lᵀ G U_R`.
    pub fn rotate(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(g)?;
        Ok(self.left.as_matrix().tr_mul(g) * self.right.as_matrix())
    }

    /// `U_L G̃ U_Rᵀ`.
    pub fn unrotate(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(g)?;
        Ok(self.left.as_matrix() * g * self.right.as_matrix().transpose())
    }

    /// [`KronBasis::rotate`] on a row-major flattened slice.
    pub fn rotate_flat(&self, g: &[f64]) -> Result<Vec<f64>> {
        let (m, n) = self.dims();
        let mat = from_row_major(m, n, g)?;
        Ok(to_row_major(&self.rotate(&mat)?))
    }

    /// [`KronBasis::unrotate`] on a row-major flattened slice.
    pub fn unrotate_flat(&self, g: &[f64]) -> Result<Vec<f64>> {
        let (m, n) = self.dims();
        let mat = from_row_major(m, n, g)?;
        Ok(to_row_major(&self.unrotate(&mat)?))
    }
}

pub(crate) fn from_row_major(m: usize, n: usize, g: &[f64]) -> Result<DMatrix<f64>> {
    if g.len() != m * n {
        return Err(Error::shape(format!("{} entries ({m}x{n})", m * n), g.len()));
    }
    Ok(DMatrix::from_row_slice(m, n, g))
}

pub(crate) fn to_row_major(mat: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(mat.len());
    for i in 0..mat.nrows() {
        out.extend(mat.row(i).iter());
    }
    out
}

/// Eigendecomposes each factor. The eigenvalues of `L ⊗ R` are the
/// products `λ_i μ_j`, returned in row-major order.
pub fn kron_eigenbasis(f: &KronFactors) -> (DVector<f64>, KronBasis) {
    let l = sym_eig(f.left());
    let r = sym_eig(f.right());
    let basis = KronBasis {
        left: l.basis,
        right: r.basis,
        left_eigenvalues: l.eigenvalues.map(|v| v.max(0.0)),
        right_eigenvalues: r.eigenvalues.map(|v| v.max(0.0)),
    };
    (basis.eigenvalues(), basis)
}
