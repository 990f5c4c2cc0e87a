//! Seeded generators for the synthetic tasks and a CIFAR-10 binary loader.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Bernoulli, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{ParamVector, SymMatrix};
use crate::models::{
    logistic_loss_grad, mlp_forward_backward, quad_population_grad, Activation, MlpModel, MlpParams, QuadraticModel,
    ReparamLogisticModel,
};
use crate::theory::condition_ratio;

/// Hidden width used for parity and staircase.
pub const FEATURE_HIDDEN: usize = 128;
/// Hidden width of the teacher network; the student is twice as wide.
pub const TEACHER_HIDDEN: usize = 32;
pub const DEFAULT_PARITY: (usize, usize) = (20, 6);
pub const DEFAULT_STAIRCASE_DIM: usize = 21;
pub const DEFAULT_STAIRCASE: [(usize, usize); 3] = [(0, 7), (7, 14), (14, 21)];
pub const CIFAR_RECORD: usize = 3073;
pub const CIFAR_PIXELS: usize = 3072;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskModel {
    Quadratic(QuadraticModel),
    Logistic(ReparamLogisticModel),
    Mlp(MlpModel),
}

impl TaskModel {
    pub fn dim(&self) -> usize {
        match self {
            TaskModel::Quadratic(m) => m.dim(),
            TaskModel::Logistic(m) => m.dim(),
            TaskModel::Mlp(m) => m.num_params(),
        }
    }
}

/// One draw from a [`Sampler`].
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    /// Rows are input vectors (quadratic tasks).
    Inputs(DMatrix<f64>),
    /// `(coordinate, label)` pairs for the one-hot logistic task.
    OneHot(Vec<(usize, u8)>),
    /// Inputs and regression targets, one row per sample.
    Supervised { xs: DMatrix<f64>, ys: DMatrix<f64> },
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Inputs(x) => x.nrows(),
            Batch::OneHot(v) => v.len(),
            Batch::Supervised { xs, .. } => xs.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stateless description of a data source. Randomness comes from the
/// caller's generator, so a stream is reproducible from its seed.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    /// `x = S z` with `z ~ N(0, I)`.
    Gaussian { root: DMatrix<f64> },
    OneHot { nu: DVector<f64>, p: DVector<f64> },
    /// Uniform `±1` inputs, label = sum over segments of the product of the
    /// coordinates in the segment. Parity is a single segment.
    Products { dim: usize, segments: Vec<Vec<usize>> },
    /// `x = S z`, label = teacher output.
    Teacher { root: DMatrix<f64>, model: MlpModel, theta: ParamVector },
    /// Uniform rows of a fixed dataset.
    Dataset { xs: DMatrix<f64>, ys: DMatrix<f64> },
}

fn gaussian_rows<R: Rng + ?Sized>(root: &DMatrix<f64>, n: usize, rng: &mut R) -> DMatrix<f64> {
    let d = root.ncols();
    let z = DMatrix::<f64>::from_fn(n, d, |_, _| StandardNormal.sample(rng));
    z * root.transpose()
}

fn product_labels(xs: &DMatrix<f64>, segments: &[Vec<usize>]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.nrows(), 1, |r, _| {
        segments.iter().map(|s| s.iter().map(|&j| xs[(r, j)]).product::<f64>()).sum()
    })
}

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        if n == 0 {
            return Err(Error::InvalidInput("batch size must be at least 1".into()));
        }
        Ok(match self {
            Sampler::Gaussian { root } => Batch::Inputs(gaussian_rows(root, n, rng)),
            Sampler::OneHot { nu, p } => {
                let idx = WeightedIndex::new(nu.iter().copied()).map_err(|e| Error::InvalidInput(e.to_string()))?;
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let i = idx.sample(rng);
                    let y = Bernoulli::new(p[i]).map_err(|e| Error::InvalidInput(e.to_string()))?.sample(rng);
                    out.push((i, y as u8));
                }
                Batch::OneHot(out)
            }
            Sampler::Products { dim, segments } => {
                let xs = DMatrix::from_fn(n, *dim, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
                let ys = product_labels(&xs, segments);
                Batch::Supervised { xs, ys }
            }
            Sampler::Teacher { root, model, theta } => {
                let xs = gaussian_rows(root, n, rng);
                let ys = model.predict(theta, &xs)?;
                Batch::Supervised { xs, ys }
            }
            Sampler::Dataset { xs, ys } => {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..xs.nrows())).collect();
                Batch::Supervised {
                    xs: xs.select_rows(&rows),
                    ys: ys.select_rows(&rows),
                }
            }
        })
    }
}

/// A generated problem: model, data source, and what is known about it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub name: String,
    pub model: TaskModel,
    pub sampler: Sampler,
    /// `θ*` when known.
    pub optimum: Option<ParamVector>,
    /// Fixed starting point. `None` means the model's random initialization.
    pub init: Option<ParamVector>,
    /// `r(Σ)` for covariances produced by [`search_power_covariance`].
    pub condition_ratio: Option<f64>,
}

impl TaskInstance {
    /// Exact population gradient for quadratic and logistic tasks.
    pub fn population_grad(&self, theta: &ParamVector) -> Option<Result<ParamVector>> {
        match &self.model {
            TaskModel::Quadratic(m) => Some(quad_population_grad(m, theta).map(|g| g.grad)),
            TaskModel::Logistic(m) => Some(logistic_loss_grad(m, theta).map(|(_, g)| g)),
            TaskModel::Mlp(_) => None,
        }
    }

    /// Population gradient, or a Monte-Carlo estimate over `n` samples.
    pub fn estimated_grad(&self, theta: &ParamVector, n: usize, seed: u64) -> Result<ParamVector> {
        if let Some(g) = self.population_grad(theta) {
            return g;
        }
        let TaskModel::Mlp(m) = &self.model else { unreachable!() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.sampler.sample(n, &mut rng)? {
            Batch::Supervised { xs, ys } => Ok(mlp_forward_backward(m, theta, &xs, &ys)?.1),
            _ => Err(Error::InvalidInput("MLP task with a non-supervised sampler".into())),
        }
    }
}

fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthonormal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `n` log-spaced values from `lo` to `hi`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> DVector<f64> {
    if n == 1 {
        return DVector::from_element(1, lo);
    }
    let (a, b) = (lo.ln(), hi.ln());
    DVector::from_fn(n, |i, _| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

fn quadratic_task(name: String, cov: SymMatrix, rng: &mut ChaCha8Rng, ratio: Option<f64>) -> Result<TaskInstance> {
    let d = cov.dim();
    let root = cov.psd_power(0.5)?.into_inner();
    let theta_star = standard_normal_vec(d, rng);
    let model = QuadraticModel::new(cov, theta_star.clone())?;
    Ok(TaskInstance {
        name,
        model: TaskModel::Quadratic(model),
        sampler: Sampler::Gaussian { root },
        optimum: Some(theta_star),
        init: Some(DVector::zeros(d)),
        condition_ratio: ratio,
    })
}

/// `Σ = [[11ᵀ, 0], [0, I]]` of size `2·d_block`, `θ* ~ N(0, I)`, start at 0.
pub fn gen_block_covariance(d_block: usize, seed: u64) -> Result<TaskInstance> {
    if d_block < 2 {
        return Err(Error::InvalidInput("block size must be at least 2".into()));
    }
    let n = 2 * d_block;
    let cov = DMatrix::from_fn(n, n, |i, j| {
        if i < d_block && j < d_block || i == j {
            1.0
        } else {
            0.0
        }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    quadratic_task(format!("block-{d_block}"), SymMatrix::new(cov)?, &mut rng, None)
}

/// `Σ = U diag(spectrum) Uᵀ` with Haar `U`. The default spectrum is
/// log-spaced on `[0.01, 1]`.
pub fn gen_random_quadratic(d: usize, seed: u64, spectrum: Option<DVector<f64>>) -> Result<TaskInstance> {
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    let lambda = spectrum.unwrap_or_else(|| log_spaced(0.01, 1.0, d));
    if lambda.len() != d {
        return Err(Error::shape(d, lambda.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_orthogonal(d, &mut rng);
    let cov = SymMatrix::new(&u * DMatrix::from_diagonal(&lambda) * u.transpose())?;
    quadratic_task(format!("quadratic-{d}"), cov, &mut rng, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerDirection {
    /// `r(Σ) > 1`: power −1/2 is better conditioned.
    HalfWins,
    /// `r(Σ) < 1`: power −1 is better conditioned.
    OneWins,
}

impl PowerDirection {
    /// `r > 1 + margin` or `r < 1 / (1 + margin)`.
    pub fn accepts(self, r: f64, margin: f64) -> bool {
        match self {
            PowerDirection::HalfWins => r > 1.0 + margin,
            PowerDirection::OneWins => r < 1.0 / (1.0 + margin),
        }
    }
}

/// Parameters of [`search_power_covariance`].
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSearch {
    pub d: usize,
    pub direction: PowerDirection,
    pub trials: usize,
    pub seed: u64,
    /// Eigenvalues of `Σ`; log-spaced on `[1, 100]` when `None`.
    pub spectrum: Option<DVector<f64>>,
    /// Required distance of `r` from 1, see [`PowerDirection::accepts`].
    pub margin: f64,
}

impl PowerSearch {
    pub fn new(d: usize, direction: PowerDirection, trials: usize, seed: u64) -> Self {
        PowerSearch {
            d,
            direction,
            trials,
            seed,
            spectrum: None,
            margin: 1e-9,
        }
    }
}

/// Samples `Σ = UΛUᵀ` with Haar `U` until `r(Σ)` satisfies the direction.
pub fn search_power_covariance(s: &PowerSearch) -> Result<TaskInstance> {
    if s.d < 2 || s.trials == 0 {
        return Err(Error::InvalidInput("need d ≥ 2 and at least one trial".into()));
    }
    let lambda = s.spectrum.clone().unwrap_or_else(|| log_spaced(1.0, 100.0, s.d));
    if lambda.len() != s.d {
        return Err(Error::shape(s.d, lambda.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    for _ in 0..s.trials {
        let u = random_orthogonal(s.d, &mut rng);
        let cov = SymMatrix::new(&u * DMatrix::from_diagonal(&lambda) * u.transpose())?;
        let r = condition_ratio(&cov)?;
        if s.direction.accepts(r, s.margin) {
            let name = match s.direction {
                PowerDirection::HalfWins => "sigma-half",
                PowerDirection::OneWins => "sigma-one",
            };
            return quadratic_task(name.into(), cov, &mut rng, Some(r));
        }
    }
    Err(Error::SearchExhausted { trials: s.trials })
}

/// `ν_i ∝ i^{−c}`, constant `P`, start at `(1/√d)·1`, `θ*_i = √σ⁻¹(P)`.
pub fn gen_powerlaw_logistic(d: usize, c: f64, p: f64) -> Result<TaskInstance> {
    if d < 2 || !(c >= 0.0) {
        return Err(Error::InvalidInput("need d ≥ 2 and c ≥ 0".into()));
    }
    let raw = DVector::from_fn(d, |i, _| ((i + 1) as f64).powf(-c));
    let nu = &raw / raw.sum();
    let probs = DVector::from_element(d, p);
    let model = ReparamLogisticModel::new(nu.clone(), probs.clone())?;
    let optimum = model.optimum();
    Ok(TaskInstance {
        name: format!("logistic-{d}"),
        model: TaskModel::Logistic(model),
        sampler: Sampler::OneHot { nu, p: probs },
        optimum: Some(optimum),
        init: Some(DVector::from_element(d, 1.0 / (d as f64).sqrt())),
        condition_ratio: None,
    })
}

fn product_task(name: String, dim: usize, segments: Vec<Vec<usize>>) -> Result<TaskInstance> {
    let model = MlpModel::new(dim, FEATURE_HIDDEN, 1, Activation::Relu)?;
    Ok(TaskInstance {
        name,
        model: TaskModel::Mlp(model),
        sampler: Sampler::Products { dim, segments },
        optimum: None,
        init: None,
        condition_ratio: None,
    })
}

/// `(d, k)`-parity with a seeded hidden support.
pub fn gen_parity(d: usize, k: usize, seed: u64) -> Result<TaskInstance> {
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!("need 1 ≤ k ≤ d, got k = {k}, d = {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut support = index::sample(&mut rng, d, k).into_vec();
    support.sort_unstable();
    product_task(format!("parity-{d}-{k}"), d, vec![support])
}

/// Sum of products over disjoint half-open segments `[lo, hi)`.
pub fn gen_staircase(d: usize, segments: &[(usize, usize)]) -> Result<TaskInstance> {
    if segments.is_empty() {
        return Err(Error::InvalidInput("no segments".into()));
    }
    let mut sorted = segments.to_vec();
    sorted.sort_unstable();
    for (i, &(lo, hi)) in sorted.iter().enumerate() {
        if lo >= hi || hi > d {
            return Err(Error::InvalidInput(format!("segment ({lo}, {hi}) invalid for d = {d}")));
        }
        if i > 0 && sorted[i - 1].1 > lo {
            return Err(Error::InvalidInput(format!("overlapping segments at ({lo}, {hi})")));
        }
    }
    let segs = segments.iter().map(|&(lo, hi)| (lo..hi).collect()).collect();
    product_task(format!("staircase-{d}-{}", segments.len()), d, segs)
}

/// ReLU teacher of width `m_teacher` with Gaussian weights and biases and a
/// random input covariance `AAᵀ/d`. The student is twice as wide; its
/// optimum is the teacher padded with zero units.
pub fn gen_teacher_student(d: usize, m_teacher: usize, seed: u64) -> Result<TaskInstance> {
    let teacher = MlpModel::new(d, m_teacher, 1, Activation::Relu)?;
    let student = MlpModel::new(d, 2 * m_teacher, 1, Activation::Relu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = teacher.init_params(&mut rng);
    let b_off = teacher.b_offset();
    for j in 0..m_teacher {
        theta[b_off + j] = StandardNormal.sample(&mut rng);
    }
    let a = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let root = a / (d as f64).sqrt();
    let optimum = pad_teacher(&teacher, &student, &theta)?;
    Ok(TaskInstance {
        name: format!("teacher-{d}-{m_teacher}"),
        model: TaskModel::Mlp(student),
        sampler: Sampler::Teacher {
            root,
            model: teacher,
            theta,
        },
        optimum: Some(optimum),
        init: None,
        condition_ratio: None,
    })
}

/// Embeds a narrow network into a wider one by adding zero units.
pub fn pad_teacher(teacher: &MlpModel, student: &MlpModel, theta: &ParamVector) -> Result<ParamVector> {
    if student.input != teacher.input || student.output != teacher.output || student.hidden < teacher.hidden {
        return Err(Error::InvalidInput("student cannot embed the teacher".into()));
    }
    let t = teacher.unpack(theta)?;
    let (m, h) = (teacher.hidden, student.hidden);
    let mut p = MlpParams {
        w: DMatrix::zeros(h, student.input),
        b: DVector::zeros(h),
        a: DMatrix::zeros(student.output, h),
    };
    p.w.rows_mut(0, m).copy_from(&t.w);
    p.b.rows_mut(0, m).copy_from(&t.b);
    p.a.columns_mut(0, m).copy_from(&t.a);
    student.pack(&p)
}

/// Parses CIFAR-10 binary records: pixels scaled to `[0, 1]`, labels
/// one-hot over 10 classes.
pub fn parse_cifar10_binary(bytes: &[u8]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a positive multiple of the {CIFAR_RECORD}-byte record",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut xs = DMatrix::zeros(n, CIFAR_PIXELS);
    let mut ys = DMatrix::zeros(n, 10);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Format(format!("record {r}: label byte {label} ≥ 10")));
        }
        ys[(r, label)] = 1.0;
        for (j, &px) in rec[1..].iter().enumerate() {
            xs[(r, j)] = px as f64 / 255.0;
        }
    }
    Ok((xs, ys))
}

/// Loads a CIFAR-10 binary batch as a 10-output regression task.
pub fn load_cifar10_binary(path: &Path, hidden: usize) -> Result<TaskInstance> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (xs, ys) = parse_cifar10_binary(&bytes)?;
    let model = MlpModel::new(CIFAR_PIXELS, hidden, 10, Activation::Relu)?;
    Ok(TaskInstance {
        name: "cifar10".into(),
        model: TaskModel::Mlp(model),
        sampler: Sampler::Dataset { xs, ys },
        optimum: None,
        init: None,
        condition_ratio: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius;
    use crate::models::{logistic_loss_grad, mlp_forward_backward};
    use crate::theory::preconditioned_condition;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cov_of(task: &TaskInstance) -> &SymMatrix {
        match &task.model {
            TaskModel::Quadratic(m) => m.cov(),
            _ => panic!("not quadratic"),
        }
    }

    #[test]
    fn block_covariance_layout() {
        let t = gen_block_covariance(2, 0).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert_eq!(cov_of(&t).as_matrix(), &expected);
        let big = gen_block_covariance(7, 0).unwrap();
        assert!((cov_of(&big).max_eigenvalue() - 7.0).abs() < 1e-12);
        assert!(gen_block_covariance(1, 0).is_err());
    }

    #[test]
    fn block_sampler_covariance() {
        let t = gen_block_covariance(3, 1).unwrap();
        let Batch::Inputs(x) = t.sampler.sample(1_000_000, &mut rng(2)).unwrap() else { panic!() };
        let emp = x.tr_mul(&x) / x.nrows() as f64;
        assert!(relative_frobenius(&emp, cov_of(&t).as_matrix()) < 0.02);
    }

    #[test]
    fn orthogonal_is_orthonormal() {
        let q = random_orthogonal(6, &mut rng(3));
        assert!((q.tr_mul(&q) - DMatrix::identity(6, 6)).amax() < 1e-12);
    }

    #[test]
    fn power_search_both_directions() {
        for direction in [PowerDirection::HalfWins, PowerDirection::OneWins] {
            let t = search_power_covariance(&PowerSearch::new(5, direction, 10_000, 7)).unwrap();
            let r = condition_ratio(cov_of(&t)).unwrap();
            assert_eq!(t.condition_ratio, Some(r));
            assert!(direction.accepts(r, 1e-9), "{direction:?} r = {r}");
        }
    }

    #[test]
    fn diagonal_spectrum_is_decided_by_the_power_minus_one_side() {
        // With U = I both preconditioners act on a diagonal Σ: power −1 gives
        // I, power −1/2 gives Σ^{1/2}, so r = 1/√κ(Σ) and only one_wins can
        // be satisfied.
        let s = SymMatrix::from_diagonal(&log_spaced(1.0, 100.0, 5)).unwrap();
        assert!((preconditioned_condition(&s, -1.0).unwrap() - 1.0).abs() < 1e-12);
        let r = condition_ratio(&s).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        assert!(!PowerDirection::HalfWins.accepts(r, 1e-9));
        // Equal eigenvalues make Σ = cI for every U, so r = 1 and the search fails.
        let mut s = PowerSearch::new(4, PowerDirection::HalfWins, 50, 1);
        s.spectrum = Some(DVector::from_element(4, 2.0));
        assert!(matches!(search_power_covariance(&s), Err(Error::SearchExhausted { trials: 50 })));
    }

    #[test]
    fn powerlaw_examples() {
        let t = gen_powerlaw_logistic(8, 0.0, 0.7).unwrap();
        let TaskModel::Logistic(m) = &t.model else { panic!() };
        assert!(m.nu().iter().all(|&v| (v - 0.125).abs() < 1e-15));
        let big = gen_powerlaw_logistic(2048, 0.6, 0.75).unwrap();
        let TaskModel::Logistic(m) = &big.model else { panic!() };
        assert!((m.nu()[0] / m.nu()[1] - 2f64.powf(0.6)).abs() < 1e-12);
        let g = logistic_loss_grad(m, big.optimum.as_ref().unwrap()).unwrap().1;
        assert!(g.amax() < 1e-12);
        assert!((big.init.as_ref().unwrap()[0] - 1.0 / 2048f64.sqrt()).abs() < 1e-15);
        assert!(gen_powerlaw_logistic(8, 0.6, 0.9).is_err());
    }

    #[test]
    fn logistic_sampler_frequencies() {
        let t = gen_powerlaw_logistic(4, 1.0, 0.75).unwrap();
        let Batch::OneHot(v) = t.sampler.sample(200_000, &mut rng(4)).unwrap() else { panic!() };
        let TaskModel::Logistic(m) = &t.model else { panic!() };
        let n = v.len() as f64;
        for i in 0..4 {
            let count = v.iter().filter(|(j, _)| *j == i).count() as f64;
            let p = m.nu()[i];
            assert!((count / n - p).abs() < 4.0 * (p * (1.0 - p) / n).sqrt());
        }
        let ones = v.iter().filter(|(_, y)| *y == 1).count() as f64;
        assert!((ones / n - 0.75).abs() < 4.0 * (0.1875 / n).sqrt());
    }

    fn supervised(t: &TaskInstance, n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        match t.sampler.sample(n, &mut rng(seed)).unwrap() {
            Batch::Supervised { xs, ys } => (xs, ys),
            _ => panic!(),
        }
    }

    #[test]
    fn parity_examples() {
        let t = gen_parity(10, 1, 5).unwrap();
        let Sampler::Products { segments, .. } = &t.sampler else { panic!() };
        let s = segments[0][0];
        let (xs, ys) = supervised(&t, 100, 6);
        for r in 0..100 {
            assert_eq!(ys[(r, 0)], xs[(r, s)]);
        }
        let ones = DMatrix::from_element(1, 20, 1.0);
        let t = gen_parity(20, 6, 0).unwrap();
        let Sampler::Products { segments, .. } = &t.sampler else { panic!() };
        assert_eq!(product_labels(&ones, segments)[(0, 0)], 1.0);
        assert!(gen_parity(3, 4, 0).is_err());
        assert!(gen_parity(3, 0, 0).is_err());
    }

    #[test]
    fn parity_correlations() {
        let (d, k) = DEFAULT_PARITY;
        let t = gen_parity(d, k, 11).unwrap();
        let Sampler::Products { segments, .. } = &t.sampler else { panic!() };
        let support = segments[0].clone();
        let n = 20_000;
        let (xs, ys) = supervised(&t, n, 12);
        let corr = |set: &[usize]| -> f64 {
            (0..n).map(|r| ys[(r, 0)] * set.iter().map(|&j| xs[(r, j)]).product::<f64>()).sum::<f64>() / n as f64
        };
        assert_eq!(corr(&support), 1.0);
        let band = 3.0 / (n as f64).sqrt();
        let mut other = support.clone();
        other[0] = (0..d).find(|j| !support.contains(j)).unwrap();
        assert!(corr(&other).abs() < band);
        assert!(corr(&support[..k - 1]).abs() < band);
    }

    #[test]
    fn staircase_examples() {
        let t = gen_staircase(DEFAULT_STAIRCASE_DIM, &DEFAULT_STAIRCASE).unwrap();
        let Sampler::Products { segments, .. } = &t.sampler else { panic!() };
        assert_eq!(product_labels(&DMatrix::from_element(1, 21, 1.0), segments)[(0, 0)], 3.0);
        let full = gen_staircase(5, &[(0, 5)]).unwrap();
        let Sampler::Products { segments, .. } = &full.sampler else { panic!() };
        assert_eq!(segments, &vec![vec![0, 1, 2, 3, 4]]);
        assert!(gen_staircase(10, &[(0, 5), (4, 8)]).is_err());
        assert!(gen_staircase(10, &[(0, 11)]).is_err());
    }

    #[test]
    fn staircase_label_histogram() {
        let t = gen_staircase(DEFAULT_STAIRCASE_DIM, &DEFAULT_STAIRCASE).unwrap();
        let n = 100_000;
        let (_, ys) = supervised(&t, n, 13);
        // Sum of three independent fair ±1 variables: (1, 3, 3, 1)/8.
        for (value, p) in [(-3.0, 0.125), (-1.0, 0.375), (1.0, 0.375), (3.0, 0.125)] {
            let count = ys.iter().filter(|&&y| y == value).count() as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count - n as f64 * p).abs() < 3.0 * sd, "y = {value}: {count}");
        }
        assert_eq!(ys.iter().filter(|y| ![-3.0, -1.0, 1.0, 3.0].contains(*y)).count(), 0);
    }

    #[test]
    fn teacher_student_examples() {
        let t = gen_teacher_student(6, 4, 21).unwrap();
        let TaskModel::Mlp(student) = &t.model else { panic!() };
        assert_eq!(student.hidden, 8);
        let (xs, ys) = supervised(&t, 256, 22);
        let opt = t.optimum.as_ref().unwrap();
        let (loss, grad) = mlp_forward_backward(student, opt, &xs, &ys).unwrap();
        assert!(loss < 1e-24);
        assert!(grad.amax() < 1e-8);

        let random = student.init_params(&mut rng(23));
        assert!(mlp_forward_backward(student, &random, &xs, &ys).unwrap().0 > 0.0);

        let Sampler::Teacher { root, model, theta } = &t.sampler else { panic!() };
        let mut silent = theta.clone();
        for i in model.a_offset()..model.num_params() {
            silent[i] = 0.0;
        }
        let zero = Sampler::Teacher { root: root.clone(), model: *model, theta: silent };
        let Batch::Supervised { ys, .. } = zero.sample(50, &mut rng(24)).unwrap() else { panic!() };
        assert!(ys.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_parity(20, 6, 3).unwrap(), gen_parity(20, 6, 3).unwrap());
        assert_eq!(gen_teacher_student(5, 3, 3).unwrap(), gen_teacher_student(5, 3, 3).unwrap());
        assert_eq!(gen_random_quadratic(5, 9, None).unwrap(), gen_random_quadratic(5, 9, None).unwrap());
        let t = gen_block_covariance(3, 4).unwrap();
        assert_eq!(t.sampler.sample(10, &mut rng(1)).unwrap(), t.sampler.sample(10, &mut rng(1)).unwrap());
    }

    #[test]
    fn cifar_fixture() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[0] = 3;
        bytes[1] = 255;
        bytes[2] = 51;
        bytes[CIFAR_RECORD] = 9;
        bytes[2 * CIFAR_RECORD - 1] = 255;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        std::fs::write(&path, &bytes).unwrap();
        let t = load_cifar10_binary(&path, 16).unwrap();
        let Sampler::Dataset { xs, ys } = &t.sampler else { panic!() };
        assert_eq!(xs.nrows(), bytes.len() / CIFAR_RECORD);
        assert_eq!(ys.row(0).iter().cloned().collect::<Vec<_>>(), vec![0., 0., 0., 1., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(ys[(1, 9)], 1.0);
        assert_eq!(xs[(0, 0)], 1.0);
        assert_eq!(xs[(0, 1)], 0.2);
        assert_eq!(xs[(1, CIFAR_PIXELS - 1)], 1.0);
        assert_eq!(xs.row(1).iter().filter(|&&v| v != 0.0).count(), 1);

        std::fs::write(&path, &bytes[..CIFAR_RECORD + 5]).unwrap();
        assert!(matches!(load_cifar10_binary(&path, 16), Err(Error::Format(_))));
        assert!(matches!(load_cifar10_binary(&dir.path().join("missing"), 16), Err(Error::Io { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn optimum_has_zero_population_gradient(seed in any::<u64>(), d in 2usize..=12) {
                for t in [
                    gen_block_covariance(d, seed).unwrap(),
                    gen_random_quadratic(d, seed, None).unwrap(),
                    gen_powerlaw_logistic(d, 0.6, 0.7).unwrap(),
                ] {
                    let g = t.population_grad(t.optimum.as_ref().unwrap()).unwrap().unwrap();
                    prop_assert!(g.amax() < 1e-8);
                }
                let t = gen_teacher_student(d, 3, seed).unwrap();
                let g = t.estimated_grad(t.optimum.as_ref().unwrap(), 64, seed).unwrap();
                prop_assert!(g.amax() < 1e-8);
            }

            #[test]
            fn search_output_meets_predicate(seed in any::<u64>(), half in any::<bool>()) {
                let direction = if half { PowerDirection::HalfWins } else { PowerDirection::OneWins };
                let t = search_power_covariance(&PowerSearch::new(5, direction, 10_000, seed)).unwrap();
                let r = condition_ratio(cov_of(&t)).unwrap();
                prop_assert!(direction.accepts(r, 1e-9));
            }
        }
    }
}
