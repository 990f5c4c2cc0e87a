use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{KronFactors, ParamVector, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, h: f64) -> f64 {
        match self {
            Activation::Relu => h.max(0.0),
            Activation::Identity => h,
        }
    }

    // ReLU'(0) = 0.
    fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One-hidden-layer network `ŷ = A·σ(Wx + b)` trained with half squared
/// error, `½ mean_batch ‖ŷ − y‖²`.
///
/// Parameters are flattened as `[W (row-major), b, A (row-major)]` with
/// `W` hidden×input and `A` output×hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MlpModel {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub activation: Activation,
}

/// Unflattened MLP parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub a: DMatrix<f64>,
}

impl MlpModel {
    pub fn new(input: usize, hidden: usize, output: usize, activation: Activation) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::InvalidInput("MLP dimensions must be positive".into()));
        }
        Ok(MlpModel {
            input,
            hidden,
            output,
            activation,
        })
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden
    }

    pub fn w_len(&self) -> usize {
        self.hidden * self.input
    }

    pub fn b_offset(&self) -> usize {
        self.w_len()
    }

    pub fn a_offset(&self) -> usize {
        self.w_len() + self.hidden
    }

    pub fn unpack(&self, theta: &ParamVector) -> Result<MlpParams> {
        if theta.len() != self.num_params() {
            return Err(Error::shape(self.num_params(), theta.len()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite MLP parameter".into()));
        }
        let s = theta.as_slice();
        Ok(MlpParams {
            w: DMatrix::from_row_slice(self.hidden, self.input, &s[..self.w_len()]),
            b: DVector::from_row_slice(&s[self.b_offset()..self.a_offset()]),
            a: DMatrix::from_row_slice(self.output, self.hidden, &s[self.a_offset()..]),
        })
    }

    pub fn pack(&self, p: &MlpParams) -> Result<ParamVector> {
        if p.w.shape() != (self.hidden, self.input)
            || p.b.len() != self.hidden
            || p.a.shape() != (self.output, self.hidden)
        {
            return Err(Error::shape(
                format!("W {}x{}, b {}, A {}x{}", self.hidden, self.input, self.hidden, self.output, self.hidden),
                format!("W {:?}, b {}, A {:?}", p.w.shape(), p.b.len(), p.a.shape()),
            ));
        }
        let mut out = Vec::with_capacity(self.num_params());
        push_row_major(&mut out, &p.w);
        out.extend(p.b.iter());
        push_row_major(&mut out, &p.a);
        Ok(DVector::from_vec(out))
    }

    /// `W ~ N(0, 1/input)`, `b = 0`, `A ~ N(0, 1/hidden)`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let w_dist = Normal::new(0.0, (1.0 / self.input as f64).sqrt()).expect("valid std");
        let a_dist = Normal::new(0.0, (1.0 / self.hidden as f64).sqrt()).expect("valid std");
        let mut out = Vec::with_capacity(self.num_params());
        out.extend((0..self.w_len()).map(|_| w_dist.sample(rng)));
        out.extend(std::iter::repeat_n(0.0, self.hidden));
        out.extend((0..self.output * self.hidden).map(|_| a_dist.sample(rng)));
        DVector::from_vec(out)
    }

    fn check_inputs(&self, xs: &DMatrix<f64>) -> Result<()> {
        if xs.nrows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if xs.ncols() != self.input {
            return Err(Error::shape(format!("{} input columns", self.input), xs.ncols()));
        }
        Ok(())
    }

    fn pre_activations(&self, p: &MlpParams, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = xs * p.w.transpose();
        for mut row in h.row_iter_mut() {
            row += p.b.transpose();
        }
        h
    }

    /// Outputs for each row of `xs`, as a batch×output matrix.
    pub fn predict(&self, theta: &ParamVector, xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(xs)?;
        let p = self.unpack(theta)?;
        let z = self.pre_activations(&p, xs).map(|v| self.activation.apply(v));
        Ok(z * p.a.transpose())
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
}

/// Half squared-error loss `½ mean_b ‖ŷ_b − y_b‖²` and its exact gradient.
pub fn mlp_forward_backward(
    m: &MlpModel,
    theta: &ParamVector,
    xs: &DMatrix<f64>,
    ys: &DMatrix<f64>,
) -> Result<(f64, ParamVector)> {
    m.check_inputs(xs)?;
    if ys.shape() != (xs.nrows(), m.output) {
        return Err(Error::shape(
            format!("{}x{} targets", xs.nrows(), m.output),
            format!("{}x{}", ys.nrows(), ys.ncols()),
        ));
    }
    let p = m.unpack(theta)?;
    let batch = xs.nrows() as f64;
    let h = m.pre_activations(&p, xs);
    let z = h.map(|v| m.activation.apply(v));
    let residual = &z * p.a.transpose() - ys;
    let loss = 0.5 * residual.norm_squared() / batch;

    let grad_a = residual.tr_mul(&z) / batch;
    let mut dh = &residual * &p.a;
    dh.zip_apply(&h, |g, hv| *g *= m.activation.derivative(hv));
    let grad_w = dh.tr_mul(xs) / batch;
    let grad_b = DVector::from_fn(m.hidden, |j, _| dh.column(j).sum() / batch);

    let grad = m.pack(&MlpParams {
        w: grad_w,
        b: grad_b,
        a: grad_a,
    })?;
    Ok((loss, grad))
}

/// `(E[GGᵀ], E[GᵀG])` over per-sample matrices `G`, with the right factor
/// scaled to unit trace so that `tr(L ⊗ R) = E‖G‖²_F`.
pub fn kron_factors_from_samples(samples: &[DMatrix<f64>]) -> Result<KronFactors> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let (rows, cols) = first.shape();
    let mut left = DMatrix::zeros(rows, rows);
    let mut right = DMatrix::zeros(cols, cols);
    for g in samples {
        if g.shape() != (rows, cols) {
            return Err(Error::shape(format!("{rows}x{cols}"), format!("{:?}", g.shape())));
        }
        left += g * g.transpose();
        right += g.tr_mul(g);
    }
    let n = samples.len() as f64;
    normalized_factors(left / n, right / n)
}

fn normalized_factors(left: DMatrix<f64>, right: DMatrix<f64>) -> Result<KronFactors> {
    let cols = right.nrows();
    let tr = right.trace();
    let right = if tr > 0.0 {
        right / tr
    } else {
        DMatrix::identity(cols, cols) / cols as f64
    };
    KronFactors::new(SymMatrix::new(left)?, SymMatrix::new(right)?)
}

/// Gauss-Newton curvature of the MLP, estimated on a batch.
///
/// The first layer carries Kronecker factors built from per-sample output
/// Jacobians `∂ŷ_k/∂W = u_k xᵀ` with `u_k = A_k ∘ σ'(h)`, summed over
/// outputs. Every parameter also gets its exact GN diagonal
/// `E[Σ_k (∂ŷ_k/∂θ_i)²]`, in the flattened parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCurvature {
    pub w_factors: KronFactors,
    pub diag: DVector<f64>,
}

impl MlpCurvature {
    pub fn w_diag<'a>(&'a self, m: &MlpModel) -> &'a [f64] {
        &self.diag.as_slice()[..m.w_len()]
    }
}

pub fn mlp_gn_kron(m: &MlpModel, theta: &ParamVector, xs: &DMatrix<f64>) -> Result<MlpCurvature> {
    m.check_inputs(xs)?;
    let p = m.unpack(theta)?;
    let batch = xs.nrows() as f64;
    let h = m.pre_activations(&p, xs);
    let z = h.map(|v| m.activation.apply(v));
    let dact = h.map(|v| m.activation.derivative(v));

    let x_sq = DVector::from_fn(xs.nrows(), |r, _| xs.row(r).norm_squared());
    // Column j of A, squared and summed over outputs.
    let a_col_sq = DVector::from_fn(m.hidden, |j, _| p.a.column(j).norm_squared());
    let ata = p.a.tr_mul(&p.a);

    // L = mean_b ‖x_b‖² (σ'_b σ'_bᵀ) ∘ AᵀA
    let mut weighted = dact.clone();
    for (r, mut row) in weighted.row_iter_mut().enumerate() {
        row *= x_sq[r];
    }
    let left = (dact.tr_mul(&weighted) / batch).component_mul(&ata);

    // R = mean_b (Σ_j A²_·j σ'²_bj) x_b x_bᵀ
    let dact_sq = dact.map(|v| v * v);
    let u_sq = &dact_sq * &a_col_sq;
    let mut xs_weighted = xs.clone();
    for (r, mut row) in xs_weighted.row_iter_mut().enumerate() {
        row *= u_sq[r];
    }
    let right = xs.tr_mul(&xs_weighted) / batch;
    let w_factors = normalized_factors(left, right)?;

    let mut diag = Vec::with_capacity(m.num_params());
    let xs_sq = xs.map(|v| v * v);
    let w_diag = dact_sq.tr_mul(&xs_sq) / batch;
    for i in 0..m.hidden {
        diag.extend(w_diag.row(i).iter().map(|v| v * a_col_sq[i]));
    }
    for j in 0..m.hidden {
        diag.push(dact_sq.column(j).sum() / batch * a_col_sq[j]);
    }
    let z_sq_mean = DVector::from_fn(m.hidden, |j, _| z.column(j).norm_squared() / batch);
    for _ in 0..m.output {
        diag.extend(z_sq_mean.iter());
    }
    Ok(MlpCurvature {
        w_factors,
        diag: DVector::from_vec(diag),
    })
}
