//! The preconditioned update `θ ← θ − η U (D ⊙ Uᵀg)`.
//!
//! A basis `U` is estimated from a curvature matrix, gradients are rotated
//! into it, scaled per coordinate by an Adam or Gauss-Newton diagonal, and
//! rotated back.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{
    geodesic_interp, kron_eigenbasis, sym_eig, KronBasis, KronFactors, OrthoMatrix, ParamVector,
    SymMatrix, PSD_TOL,
};
use crate::models::{MlpCurvature, MlpModel};

/// Which basis the update runs in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasisKind {
    Identity,
    /// Eigenbasis of the curvature. On layered (MLP) curvature this is the
    /// Kronecker-factored eigenbasis.
    Eigen,
    KronEigen,
    /// Geodesic fraction `α` of the way from the identity to the eigenbasis.
    Interpolated(f64),
}

/// Exponent applied to a curvature or second-moment estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Power {
    /// `p = −1/2`
    InvSqrt,
    /// `p = −1`
    Inv,
}

impl Power {
    pub fn value(self) -> f64 {
        match self {
            Power::InvSqrt => -0.5,
            Power::Inv => -1.0,
        }
    }

    pub fn from_value(p: f64) -> Result<Self> {
        if p == -0.5 {
            Ok(Power::InvSqrt)
        } else if p == -1.0 {
            Ok(Power::Inv)
        } else {
            Err(Error::InvalidInput(format!("power {p} is not −1/2 or −1")))
        }
    }

    // m^{−p}, computed so that sqrt and identity are exact.
    fn denominator(self, m: f64) -> f64 {
        match self {
            Power::InvSqrt => m.sqrt(),
            Power::Inv => m,
        }
    }
}

/// Curvature estimate, in the shape the basis is built from.
#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    Dense(SymMatrix),
    /// A diagonal matrix given by its diagonal.
    Diagonal(DVector<f64>),
    /// Contiguous parameter blocks, each with its own structure.
    Layered(Vec<LayerCurvature>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCurvature {
    pub offset: usize,
    pub kind: LayerCurvatureKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerCurvatureKind {
    /// Kronecker factors of an m×n matrix parameter plus its exact diagonal
    /// (row-major), which the identity basis uses.
    Kron {
        factors: KronFactors,
        diag: DVector<f64>,
    },
    Diagonal(DVector<f64>),
}

impl LayerCurvatureKind {
    fn len(&self) -> usize {
        match self {
            LayerCurvatureKind::Kron { diag, .. } => diag.len(),
            LayerCurvatureKind::Diagonal(d) => d.len(),
        }
    }
}

impl Curvature {
    pub fn dim(&self) -> usize {
        match self {
            Curvature::Dense(s) => s.dim(),
            Curvature::Diagonal(d) => d.len(),
            Curvature::Layered(layers) => layers.last().map_or(0, |l| l.offset + l.kind.len()),
        }
    }

    /// The first layer as a Kronecker block, biases and output weights as
    /// diagonal blocks.
    pub fn from_mlp(m: &MlpModel, c: &MlpCurvature) -> Curvature {
        let w_len = m.w_len();
        Curvature::Layered(vec![
            LayerCurvature {
                offset: 0,
                kind: LayerCurvatureKind::Kron {
                    factors: c.w_factors.clone(),
                    diag: DVector::from_row_slice(&c.diag.as_slice()[..w_len]),
                },
            },
            LayerCurvature {
                offset: w_len,
                kind: LayerCurvatureKind::Diagonal(DVector::from_row_slice(&c.diag.as_slice()[w_len..])),
            },
        ])
    }
}

/// An orthonormal basis in one of its representations.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisSpec {
    Identity,
    Eigen(OrthoMatrix),
    KronEigen(Vec<LayerBasis>),
    Interpolated { basis: OrthoMatrix, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBasis {
    pub offset: usize,
    pub kind: LayerBasisKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerBasisKind {
    Kron(KronBasis),
    Identity(usize),
}

impl LayerBasisKind {
    fn len(&self) -> usize {
        match self {
            LayerBasisKind::Kron(k) => k.len(),
            LayerBasisKind::Identity(n) => *n,
        }
    }
}

impl BasisSpec {
    /// Dense `U`. Identity needs the dimension; Kronecker blocks are
    /// materialized, so this is for tests and small problems.
    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        match self {
            BasisSpec::Identity => DMatrix::identity(dim, dim),
            BasisSpec::Eigen(u) | BasisSpec::Interpolated { basis: u, .. } => u.as_matrix().clone(),
            BasisSpec::KronEigen(layers) => {
                let mut out = DMatrix::zeros(dim, dim);
                for layer in layers {
                    let block = match &layer.kind {
                        LayerBasisKind::Kron(k) => k.left().as_matrix().kronecker(k.right().as_matrix()),
                        LayerBasisKind::Identity(n) => DMatrix::identity(*n, *n),
                    };
                    let n = block.nrows();
                    out.view_mut((layer.offset, layer.offset), (n, n)).copy_from(&block);
                }
                out
            }
        }
    }
}

/// Re-signs the columns of an eigenbasis so it can be interpolated: each
/// column gets a nonnegative diagonal entry (this maximizes the trace and so
/// shortens the geodesic from `I`), then the first column (the smallest
/// eigenvalue's) is flipped if `det U < 0`. `U D Uᵀ` is unchanged for every
/// diagonal `D`.
pub fn as_rotation(mut u: OrthoMatrix) -> OrthoMatrix {
    for j in 0..u.dim() {
        if u.as_matrix()[(j, j)] < 0.0 {
            u.flip_column(j);
        }
    }
    if u.determinant() < 0.0 {
        u.flip_column(0);
    }
    u
}

fn check_psd_dense(s: &SymMatrix) -> Result<()> {
    if !s.is_psd() {
        return Err(Error::InvalidCurvature(format!(
            "smallest eigenvalue {:e}",
            s.min_eigenvalue()
        )));
    }
    Ok(())
}

fn check_psd_diag(d: &DVector<f64>) -> Result<()> {
    let scale = d.amax().max(1.0);
    match d.iter().find(|&&v| !(v >= -PSD_TOL * scale)) {
        Some(v) => Err(Error::InvalidCurvature(format!("diagonal entry {v:e}"))),
        None => Ok(()),
    }
}

fn interpolated_kron(k: &KronBasis, alpha: f64) -> Result<KronBasis> {
    let left = geodesic_interp(&as_rotation(k.left().clone()), alpha)?;
    let right = geodesic_interp(&as_rotation(k.right().clone()), alpha)?;
    k.with_bases(left, right)
}

/// Builds the basis of the requested kind from a curvature estimate.
///
/// The eigenbasis of a diagonal matrix is a permutation of the axes, under
/// which any per-coordinate scaling acts exactly as in the identity basis,
/// so diagonal curvature always yields [`BasisSpec::Identity`].
pub fn estimate_basis(curv: &Curvature, kind: BasisKind) -> Result<BasisSpec> {
    if let BasisKind::Interpolated(alpha) = kind {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("α = {alpha} outside [0, 1]")));
        }
    }
    match curv {
        Curvature::Dense(s) => {
            check_psd_dense(s)?;
            match kind {
                BasisKind::Identity => Ok(BasisSpec::Identity),
                BasisKind::Eigen | BasisKind::KronEigen => Ok(BasisSpec::Eigen(sym_eig(s).basis)),
                BasisKind::Interpolated(alpha) => {
                    let u = as_rotation(sym_eig(s).basis);
                    Ok(BasisSpec::Interpolated {
                        basis: geodesic_interp(&u, alpha)?,
                        alpha,
                    })
                }
            }
        }
        Curvature::Diagonal(d) => {
            check_psd_diag(d)?;
            Ok(BasisSpec::Identity)
        }
        Curvature::Layered(layers) => {
            if kind == BasisKind::Identity {
                return Ok(BasisSpec::Identity);
            }
            let mut out = Vec::with_capacity(layers.len());
            for layer in layers {
                let kind_out = match &layer.kind {
                    LayerCurvatureKind::Kron { factors, .. } => {
                        let (_, basis) = kron_eigenbasis(factors);
                        let basis = match kind {
                            BasisKind::Interpolated(alpha) => interpolated_kron(&basis, alpha)?,
                            _ => basis,
                        };
                        LayerBasisKind::Kron(basis)
                    }
                    LayerCurvatureKind::Diagonal(d) => {
                        check_psd_diag(d)?;
                        LayerBasisKind::Identity(d.len())
                    }
                };
                out.push(LayerBasis {
                    offset: layer.offset,
                    kind: kind_out,
                });
            }
            Ok(BasisSpec::KronEigen(out))
        }
    }
}

fn check_layers(layers: &[LayerBasis], dim: usize) -> Result<()> {
    let mut at = 0;
    for layer in layers {
        if layer.offset != at {
            return Err(Error::shape(format!("layer at offset {at}"), layer.offset));
        }
        at += layer.kind.len();
    }
    if at != dim {
        return Err(Error::shape(at, dim));
    }
    Ok(())
}

fn apply_basis(g: &ParamVector, basis: &BasisSpec, transpose: bool) -> Result<ParamVector> {
    match basis {
        BasisSpec::Identity => Ok(g.clone()),
        BasisSpec::Eigen(u) | BasisSpec::Interpolated { basis: u, .. } => {
            if u.dim() != g.len() {
                return Err(Error::shape(u.dim(), g.len()));
            }
            Ok(if transpose {
                u.as_matrix().tr_mul(g)
            } else {
                u.as_matrix() * g
            })
        }
        BasisSpec::KronEigen(layers) => {
            check_layers(layers, g.len())?;
            let mut out = g.clone();
            for layer in layers {
                if let LayerBasisKind::Kron(k) = &layer.kind {
                    let range = layer.offset..layer.offset + k.len();
                    let block = &g.as_slice()[range.clone()];
                    let mapped = if transpose {
                        k.rotate_flat(block)?
                    } else {
                        k.unrotate_flat(block)?
                    };
                    out.as_mut_slice()[range].copy_from_slice(&mapped);
                }
            }
            Ok(out)
        }
    }
}

/// `g̃ = Uᵀg`.
pub fn rotate(g: &ParamVector, basis: &BasisSpec) -> Result<ParamVector> {
    apply_basis(g, basis, true)
}

/// `g = U g̃`.
pub fn unrotate(g: &ParamVector, basis: &BasisSpec) -> Result<ParamVector> {
    apply_basis(g, basis, false)
}

/// Relative size below which a gradient coordinate over a zero denominator
/// counts as zero.
pub const NULL_GRAD_TOL: f64 = 1e-12;

/// The diagonal `D` of the update.
///
/// Scalings derived from a curvature or moment `m` are kept as the
/// denominators `(m + ε)^{−p}` and applied by division, so that e.g. Adam
/// with `β₂ = 0, ε = 0` is exactly sign descent. A zero denominator gives a
/// zero update if its gradient coordinate is zero up to roundoff (relative
/// to the largest one) and an infinite update otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum DiagScale {
    Multipliers(DVector<f64>),
    Denominators(DVector<f64>),
}

impl DiagScale {
    pub fn ones(dim: usize) -> Self {
        DiagScale::Multipliers(DVector::from_element(dim, 1.0))
    }

    pub fn len(&self) -> usize {
        match self {
            DiagScale::Multipliers(v) | DiagScale::Denominators(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `D_ii` as multipliers (`1/den`, or `+∞` for a zero denominator).
    pub fn multipliers(&self) -> DVector<f64> {
        match self {
            DiagScale::Multipliers(v) => v.clone(),
            DiagScale::Denominators(v) => v.map(|d| 1.0 / d),
        }
    }

    /// `D ⊙ g̃`.
    pub fn apply(&self, g: &ParamVector) -> Result<ParamVector> {
        if g.len() != self.len() {
            return Err(Error::shape(self.len(), g.len()));
        }
        Ok(match self {
            DiagScale::Multipliers(m) => g.component_mul(m),
            DiagScale::Denominators(d) => {
                let null = NULL_GRAD_TOL * g.amax();
                g.zip_map(d, |gi, di| {
                    if di != 0.0 {
                        gi / di
                    } else if gi.abs() <= null {
                        0.0
                    } else {
                        gi.signum() * f64::INFINITY
                    }
                })
            }
        })
    }
}

/// Adam's running second moment in the rotated coordinates (β₁ = 0, no
/// bias correction, `v₀ = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoment {
    pub v: DVector<f64>,
    pub beta2: f64,
    pub eps: f64,
    pub power: Power,
}

impl AdamMoment {
    pub fn new(dim: usize, beta2: f64, eps: f64, power: Power) -> Result<Self> {
        if !(0.0..1.0).contains(&beta2) {
            return Err(Error::InvalidInput(format!("β₂ = {beta2} outside [0, 1)")));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidInput(format!("ε = {eps} is negative")));
        }
        Ok(AdamMoment {
            v: DVector::zeros(dim),
            beta2,
            eps,
            power,
        })
    }
}

/// `v ← β₂v + (1 − β₂)g̃²`, then `D_ii = (v_i + ε)^p`.
pub fn adam_diag(state: &mut AdamMoment, g_rot: &ParamVector) -> Result<DiagScale> {
    if g_rot.len() != state.v.len() {
        return Err(Error::shape(state.v.len(), g_rot.len()));
    }
    let b = state.beta2;
    state.v.zip_apply(g_rot, |v, g| *v = b * *v + (1.0 - b) * g * g);
    let eps = state.eps;
    let power = state.power;
    Ok(DiagScale::Denominators(state.v.map(|v| power.denominator(v + eps))))
}

fn dense_rayleigh(u: &DMatrix<f64>, h: &DMatrix<f64>) -> DVector<f64> {
    let hu = h * u;
    DVector::from_fn(u.ncols(), |i, _| u.column(i).dot(&hu.column(i)))
}

fn kron_rayleigh(k: &KronBasis, f: &KronFactors) -> Result<DVector<f64>> {
    if k.dims() != f.dims() {
        return Err(Error::shape(format!("{:?}", k.dims()), format!("{:?}", f.dims())));
    }
    let l = dense_rayleigh(k.left().as_matrix(), f.left().as_matrix());
    let r = dense_rayleigh(k.right().as_matrix(), f.right().as_matrix());
    let n = r.len();
    Ok(DVector::from_fn(l.len() * n, |idx, _| l[idx / n] * r[idx % n]))
}

/// Curvature along each basis direction, `u_iᵀĤu_i`.
pub fn basis_curvature(basis: &BasisSpec, curv: &Curvature) -> Result<DVector<f64>> {
    let dim = curv.dim();
    let m = match (basis, curv) {
        (BasisSpec::Identity, Curvature::Dense(s)) => s.diagonal(),
        (BasisSpec::Identity, Curvature::Diagonal(d)) => d.clone(),
        (BasisSpec::Identity, Curvature::Layered(layers)) => {
            let mut out = Vec::with_capacity(dim);
            for layer in layers {
                match &layer.kind {
                    LayerCurvatureKind::Kron { diag, .. } => out.extend(diag.iter()),
                    LayerCurvatureKind::Diagonal(d) => out.extend(d.iter()),
                }
            }
            DVector::from_vec(out)
        }
        (BasisSpec::Eigen(u) | BasisSpec::Interpolated { basis: u, .. }, Curvature::Dense(s)) => {
            if u.dim() != s.dim() {
                return Err(Error::shape(u.dim(), s.dim()));
            }
            dense_rayleigh(u.as_matrix(), s.as_matrix())
        }
        (BasisSpec::Eigen(u) | BasisSpec::Interpolated { basis: u, .. }, Curvature::Diagonal(d)) => {
            if u.dim() != d.len() {
                return Err(Error::shape(u.dim(), d.len()));
            }
            let um = u.as_matrix();
            DVector::from_fn(um.ncols(), |i, _| {
                um.column(i).iter().zip(d.iter()).map(|(x, h)| x * x * h).sum()
            })
        }
        (BasisSpec::KronEigen(bl), Curvature::Layered(cl)) => {
            if bl.len() != cl.len() {
                return Err(Error::shape(format!("{} layers", cl.len()), bl.len()));
            }
            let mut out = Vec::with_capacity(dim);
            for (b, c) in bl.iter().zip(cl) {
                if b.offset != c.offset {
                    return Err(Error::shape(c.offset, b.offset));
                }
                match (&b.kind, &c.kind) {
                    (LayerBasisKind::Kron(k), LayerCurvatureKind::Kron { factors, .. }) => {
                        out.extend(kron_rayleigh(k, factors)?.iter())
                    }
                    (LayerBasisKind::Identity(_), LayerCurvatureKind::Diagonal(d)) => out.extend(d.iter()),
                    (LayerBasisKind::Identity(_), LayerCurvatureKind::Kron { diag, .. }) => {
                        out.extend(diag.iter())
                    }
                    (LayerBasisKind::Kron(_), LayerCurvatureKind::Diagonal(_)) => {
                        return Err(Error::shape("Kronecker curvature", "diagonal curvature"))
                    }
                }
            }
            DVector::from_vec(out)
        }
        (BasisSpec::KronEigen(_), _) => {
            return Err(Error::shape("layered curvature", "unlayered curvature"))
        }
        (_, Curvature::Layered(_)) => {
            return Err(Error::shape("dense or diagonal curvature", "layered curvature"))
        }
    };
    if m.len() != dim {
        return Err(Error::shape(dim, m.len()));
    }
    let scale = m.amax().max(1.0);
    if let Some(v) = m.iter().find(|&&v| !(v >= -PSD_TOL * scale)) {
        return Err(Error::InvalidCurvature(format!("negative curvature {v:e} along a basis direction")));
    }
    // Roundoff-level curvature is a null direction; GN then acts as a pseudo-inverse.
    let floor = dim as f64 * f64::EPSILON * m.amax();
    Ok(m.map(|v| if v <= floor { 0.0 } else { v }))
}

/// `D_ii = (u_iᵀĤu_i + ε)^p`.
pub fn gn_diag(basis: &BasisSpec, curv: &Curvature, power: Power, eps: f64) -> Result<DiagScale> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidInput(format!("ε = {eps} is negative")));
    }
    let m = basis_curvature(basis, curv)?;
    Ok(DiagScale::Denominators(m.map(|v| power.denominator(v + eps))))
}

/// `θ' = θ − η U (D ⊙ Uᵀg)`.
pub fn step(theta: &ParamVector, g: &ParamVector, basis: &BasisSpec, d: &DiagScale, eta: f64) -> Result<ParamVector> {
    if theta.len() != g.len() {
        return Err(Error::shape(theta.len(), g.len()));
    }
    let scaled = d.apply(&rotate(g, basis)?)?;
    let direction = unrotate(&scaled, basis)?;
    Ok(theta - direction * eta)
}

/// Step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// `η₀·2^{−⌊t / halve_every⌋}`.
    StepDecay { eta0: f64, halve_every: usize },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let (eta0, every) = match *self {
            LrSchedule::Constant(e) => (e, 1),
            LrSchedule::StepDecay { eta0, halve_every } => (eta0, halve_every),
        };
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::InvalidInput(format!("η₀ = {eta0} must be positive")));
        }
        if every == 0 {
            return Err(Error::InvalidInput("halve_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            LrSchedule::Constant(e) => e,
            LrSchedule::StepDecay { eta0, .. } => eta0,
        }
    }

    pub fn with_eta0(&self, eta0: f64) -> LrSchedule {
        match *self {
            LrSchedule::Constant(_) => LrSchedule::Constant(eta0),
            LrSchedule::StepDecay { halve_every, .. } => LrSchedule::StepDecay { eta0, halve_every },
        }
    }
}

pub fn schedule_lr(s: &LrSchedule, t: usize) -> f64 {
    match *s {
        LrSchedule::Constant(eta) => eta,
        LrSchedule::StepDecay { eta0, halve_every } => {
            let halvings = t / halve_every.max(1);
            if halvings > 1100 {
                0.0
            } else {
                eta0 * 0.5f64.powi(halvings as i32)
            }
        }
    }
}

/// Diagonal scaling family and its fixed hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingKind {
    Adam { beta2: f64, power: Power },
    Gn { power: Power },
}

/// Per-run optimizer state: current basis, Adam moment, cached curvature.
#[derive(Debug, Clone)]
pub struct Optimizer {
    basis_kind: BasisKind,
    scaling: ScalingKind,
    eps: f64,
    refresh_every: usize,
    constant_curvature: bool,
    basis: Option<BasisSpec>,
    curvature: Option<Curvature>,
    gn_scale: Option<DiagScale>,
    adam: Option<AdamMoment>,
}

impl Optimizer {
    pub fn new(dim: usize, basis_kind: BasisKind, scaling: ScalingKind, eps: f64, refresh_every: usize) -> Result<Self> {
        if refresh_every == 0 {
            return Err(Error::InvalidInput("refresh interval must be at least 1".into()));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidInput(format!("ε = {eps} is negative")));
        }
        let adam = match scaling {
            ScalingKind::Adam { beta2, power } => Some(AdamMoment::new(dim, beta2, eps, power)?),
            ScalingKind::Gn { .. } => None,
        };
        Ok(Optimizer {
            basis_kind,
            scaling,
            eps,
            refresh_every,
            constant_curvature: false,
            basis: None,
            curvature: None,
            gn_scale: None,
            adam,
        })
    }

    /// Declares that the curvature never changes, so it is estimated once.
    pub fn with_constant_curvature(mut self, constant: bool) -> Self {
        self.constant_curvature = constant;
        self
    }

    /// Whether [`Optimizer::update`] will ever ask for curvature.
    pub fn needs_curvature(&self) -> bool {
        self.basis_kind != BasisKind::Identity || matches!(self.scaling, ScalingKind::Gn { .. })
    }

    fn due(&self, t: usize) -> bool {
        if self.curvature.is_none() {
            return true;
        }
        !self.constant_curvature && t % self.refresh_every == 0
    }

    /// Whether step `t` will call the curvature source.
    pub fn wants_curvature_at(&self, t: usize) -> bool {
        self.needs_curvature() && self.due(t)
    }

    pub fn basis(&self) -> Option<&BasisSpec> {
        self.basis.as_ref()
    }

    /// One update at step `t`. `curvature` is only invoked when a refresh is
    /// due.
    pub fn update<F>(&mut self, t: usize, theta: &ParamVector, g: &ParamVector, eta: f64, curvature: F) -> Result<ParamVector>
    where
        F: FnOnce() -> Result<Curvature>,
    {
        if self.needs_curvature() && self.due(t) {
            let c = curvature()?;
            if c.dim() != theta.len() {
                return Err(Error::shape(theta.len(), c.dim()));
            }
            let basis = estimate_basis(&c, self.basis_kind)?;
            self.gn_scale = match self.scaling {
                ScalingKind::Gn { power } => Some(gn_diag(&basis, &c, power, self.eps)?),
                ScalingKind::Adam { .. } => None,
            };
            self.basis = Some(basis);
            self.curvature = Some(c);
        }
        let basis = self.basis.get_or_insert(BasisSpec::Identity);
        let g_rot = rotate(g, basis)?;
        let d = match (&mut self.adam, &self.gn_scale) {
            (Some(state), _) => adam_diag(state, &g_rot)?,
            (None, Some(d)) => d.clone(),
            (None, None) => return Err(Error::InvalidInput("GN scaling without curvature".into())),
        };
        let direction = unrotate(&d.apply(&g_rot)?, basis)?;
        Ok(theta - direction * eta)
    }
}
