//! Experiment runner: configs, single runs, sweeps, metric files.

mod config;
mod grid;
mod metrics;
mod sweep;
pub mod verify;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{parse_pairs, BatchSize, Precond, RunConfig, TaskSpec, KEYS, POWER_SEARCH_TRIALS};
pub use grid::{grid_experiment, GridCell, GridOptions, Method, GRID_TASKS};
pub use metrics::{emit_metrics, read_metrics, sidecar_path};
pub use sweep::{best_of, evaluate, lr_grid, sweep, sweep_on, LrGrid, Selection, SweepGrid, SweepResult};

use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::models::{
    logistic_loss_grad, logistic_sample_grad, mlp_forward_backward, mlp_gn_kron, quad_batch_grad,
    quad_population_grad, sigmoid, MlpModel,
};
use crate::preconditioner::{schedule_lr, Curvature, Optimizer};
use crate::tasks::{Batch, Sampler, TaskInstance, TaskModel};
use crate::linalg::SymMatrix;

/// Size of the fixed sample set standing in for "full batch" when a task
/// has no closed-form population quantities.
pub const FULL_BATCH_SAMPLES: usize = 4096;

const STREAM_INIT: u64 = 0;
const STREAM_GRAD: u64 = 1;
const STREAM_GN: u64 = 2;
const STREAM_FULL_GRAD: u64 = 3;
const STREAM_FULL_GN: u64 = 4;

/// One logged step: the state before update `step` and the step size used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Population loss when available, otherwise the minibatch loss.
    pub loss: f64,
    /// Norm of the gradient used for the update.
    pub grad_norm: f64,
    pub dist_to_opt: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub run_id: String,
    pub seed: u64,
    pub rows: Vec<StepRecord>,
    /// Set when the run stopped at a non-finite or exploding loss; the last
    /// row is the offending step.
    pub diverged: bool,
}

impl TrajectoryRecord {
    pub fn initial_loss(&self) -> f64 {
        self.rows.first().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    /// Mean loss over the last `window` rows.
    pub fn tail_loss(&self, window: usize) -> f64 {
        let n = self.rows.len();
        let tail = &self.rows[n.saturating_sub(window.max(1))..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
    }

    /// First logged step whose loss is at most `ratio` times the initial loss.
    pub fn steps_to_loss_ratio(&self, ratio: f64) -> Option<usize> {
        let l0 = self.initial_loss();
        self.rows.iter().find(|r| r.loss <= ratio * l0).map(|r| r.step)
    }

    /// First logged step within `tol` of the optimum.
    pub fn steps_to_dist(&self, tol: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.dist_to_opt.is_some_and(|d| d <= tol))
            .map(|r| r.step)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Builds the task and runs it.
pub fn run(cfg: &RunConfig) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let task = cfg.task.build()?;
    run_on(&task, cfg)
}

fn supervised(batch: Batch) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match batch {
        Batch::Supervised { xs, ys } => Ok((xs, ys)),
        _ => Err(Error::InvalidInput("expected a supervised batch".into())),
    }
}

fn fixed_set(task: &TaskInstance, seed: u64, id: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if let Sampler::Dataset { xs, ys } = &task.sampler {
        return Ok((xs.clone(), ys.clone()));
    }
    supervised(task.sampler.sample(FULL_BATCH_SAMPLES, &mut stream(seed, id))?)
}

/// Per-run data sources, kept apart so gradient and curvature samples are
/// independent.
struct Streams {
    grad: ChaCha8Rng,
    gn: ChaCha8Rng,
    full_grad: Option<(DMatrix<f64>, DMatrix<f64>)>,
    full_gn: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn gradient(task: &TaskInstance, cfg: &RunConfig, s: &mut Streams, theta: &ParamVector) -> Result<(f64, ParamVector)> {
    match (&task.model, cfg.batch) {
        (TaskModel::Quadratic(m), BatchSize::Full) => {
            let g = quad_population_grad(m, theta)?;
            Ok((g.loss, g.grad))
        }
        (TaskModel::Quadratic(m), BatchSize::Samples(n)) => {
            let Batch::Inputs(xs) = task.sampler.sample(n, &mut s.grad)? else {
                return Err(Error::InvalidInput("quadratic task needs an input sampler".into()));
            };
            Ok((m.loss(theta)?, quad_batch_grad(m, theta, &xs)?.grad))
        }
        (TaskModel::Logistic(m), BatchSize::Full) => logistic_loss_grad(m, theta),
        (TaskModel::Logistic(m), BatchSize::Samples(n)) => {
            let Batch::OneHot(pairs) = task.sampler.sample(n, &mut s.grad)? else {
                return Err(Error::InvalidInput("logistic task needs a one-hot sampler".into()));
            };
            let mut g = DVector::zeros(m.dim());
            for &(i, y) in &pairs {
                g += logistic_sample_grad(m, theta, i, y)?.grad;
            }
            let (loss, _) = logistic_loss_grad(m, theta)?;
            Ok((loss, g / n as f64))
        }
        (TaskModel::Mlp(m), BatchSize::Full) => {
            if s.full_grad.is_none() {
                s.full_grad = Some(fixed_set(task, cfg.seed, STREAM_FULL_GRAD)?);
            }
            let (xs, ys) = s.full_grad.as_ref().expect("just set");
            mlp_forward_backward(m, theta, xs, ys)
        }
        (TaskModel::Mlp(m), BatchSize::Samples(n)) => {
            let (xs, ys) = supervised(task.sampler.sample(n, &mut s.grad)?)?;
            mlp_forward_backward(m, theta, &xs, &ys)
        }
    }
}

fn mlp_curvature(m: &MlpModel, theta: &ParamVector, xs: &DMatrix<f64>) -> Result<Curvature> {
    Ok(Curvature::from_mlp(m, &mlp_gn_kron(m, theta, xs)?))
}

fn curvature(task: &TaskInstance, cfg: &RunConfig, s: &mut Streams, theta: &ParamVector) -> Result<Curvature> {
    match (&task.model, cfg.gn_batch) {
        (TaskModel::Quadratic(m), BatchSize::Full) => Ok(Curvature::Dense(m.cov().clone())),
        (TaskModel::Quadratic(_), BatchSize::Samples(n)) => {
            let Batch::Inputs(xs) = task.sampler.sample(n, &mut s.gn)? else {
                return Err(Error::InvalidInput("quadratic task needs an input sampler".into()));
            };
            Ok(Curvature::Dense(SymMatrix::new(xs.tr_mul(&xs) / n as f64)?))
        }
        (TaskModel::Logistic(m), BatchSize::Full) => Ok(Curvature::Diagonal(crate::models::logistic_gn_diag_vec(m, theta)?)),
        (TaskModel::Logistic(m), BatchSize::Samples(n)) => {
            let Batch::OneHot(pairs) = task.sampler.sample(n, &mut s.gn)? else {
                return Err(Error::InvalidInput("logistic task needs a one-hot sampler".into()));
            };
            let mut h = DVector::zeros(m.dim());
            for &(i, _) in &pairs {
                let sq = theta[i] * theta[i];
                let sg = sigmoid(sq);
                h[i] += 4.0 * sq * sg * (1.0 - sg);
            }
            Ok(Curvature::Diagonal(h / n as f64))
        }
        (TaskModel::Mlp(m), BatchSize::Full) => {
            if s.full_gn.is_none() {
                s.full_gn = Some(fixed_set(task, cfg.seed, STREAM_FULL_GN)?);
            }
            let (xs, _) = s.full_gn.as_ref().expect("just set");
            mlp_curvature(m, theta, xs)
        }
        (TaskModel::Mlp(m), BatchSize::Samples(n)) => {
            let (xs, _) = supervised(task.sampler.sample(n, &mut s.gn)?)?;
            mlp_curvature(m, theta, &xs)
        }
    }
}

/// Runs the preconditioned loop on an already built task. Deterministic
/// given `(task, cfg)`.
pub fn run_on(task: &TaskInstance, cfg: &RunConfig) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let dim = task.model.dim();
    let mut theta = match (&task.init, &task.model) {
        (Some(t), _) => t.clone(),
        (None, TaskModel::Mlp(m)) => m.init_params(&mut stream(cfg.seed, STREAM_INIT)),
        (None, _) => DVector::zeros(dim),
    };
    let constant = matches!(task.model, TaskModel::Quadratic(_)) && cfg.gn_batch == BatchSize::Full;
    let mut opt = Optimizer::new(dim, cfg.basis, cfg.scaling(), cfg.eps, cfg.refresh)?.with_constant_curvature(constant);
    let schedule = cfg.schedule();
    let mut streams = Streams {
        grad: stream(cfg.seed, STREAM_GRAD),
        gn: stream(cfg.seed, STREAM_GN),
        full_grad: None,
        full_gn: None,
    };
    let mut record = TrajectoryRecord {
        run_id: cfg.run_id(),
        seed: cfg.seed,
        rows: Vec::with_capacity(cfg.steps),
        diverged: false,
    };
    let mut initial = None;
    for t in 0..cfg.steps {
        let (loss, g) = gradient(task, cfg, &mut streams, &theta)?;
        let eta = schedule_lr(&schedule, t);
        let grad_norm = g.norm();
        let dist = task.optimum.as_ref().map(|o| (&theta - o).norm());
        record.rows.push(StepRecord {
            step: t,
            loss,
            grad_norm,
            dist_to_opt: dist,
            lr: eta,
        });
        let l0 = *initial.get_or_insert(loss);
        let exploded = loss > cfg.diverge_factor * l0.max(f64::MIN_POSITIVE);
        if !loss.is_finite() || !grad_norm.is_finite() || exploded || dist.is_some_and(|d| !d.is_finite()) {
            record.diverged = true;
            break;
        }
        let next = opt.update(t, &theta, &g, eta, || curvature(task, cfg, &mut streams, &theta))?;
        theta = next;
    }
    Ok(record)
}
