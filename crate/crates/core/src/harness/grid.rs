//! {curvature basis, identity} × {full batch, batch 1} comparison of Adam,
//! GN⁻¹ and GN^{−1/2}, each with its own step-size sweep.

use std::path::PathBuf;

use super::{emit_metrics, sweep_on, BatchSize, LrGrid, Precond, RunConfig, Selection, SweepGrid, SweepResult, TaskSpec};
use crate::error::{Error, Result};
use crate::preconditioner::{BasisKind, Power};

pub const GRID_TASKS: [&str; 5] = ["teacher", "parity", "staircase", "quadratic", "logistic"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Adam,
    GnInv,
    GnInvSqrt,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Adam, Method::GnInv, Method::GnInvSqrt];

    pub fn name(self) -> &'static str {
        match self {
            Method::Adam => "adam",
            Method::GnInv => "gn-1",
            Method::GnInvSqrt => "gn-0.5",
        }
    }

    fn apply(self, c: &mut RunConfig) {
        let (precond, power) = match self {
            Method::Adam => (Precond::Adam, Power::InvSqrt),
            Method::GnInv => (Precond::Gn, Power::Inv),
            Method::GnInvSqrt => (Precond::Gn, Power::InvSqrt),
        };
        c.precond = precond;
        c.power = power;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptions {
    /// Overrides the per-task step count.
    pub steps: Option<usize>,
    pub seeds: Vec<u64>,
    /// Coarse step-size grid half-width, in factors of 3.
    pub lr_radius: usize,
    /// Directory for one metrics file per cell; nothing is written if `None`.
    pub out_dir: Option<PathBuf>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            steps: None,
            seeds: vec![0, 1],
            lr_radius: 4,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub basis: BasisKind,
    pub batch: BatchSize,
    pub method: Method,
    /// Best configuration of the method's sweep in this cell.
    pub best: SweepResult,
    pub metrics: Option<PathBuf>,
}

struct TaskPlan {
    base: RunConfig,
    curvature_basis: BasisKind,
    selection: Selection,
    adam_lr: f64,
    gn_lr: f64,
    gn_eps: Vec<f64>,
}

fn plan(name: &str) -> Result<TaskPlan> {
    let (task, steps, mlp) = match name {
        "quadratic" => (TaskSpec::Block { d_block: 50, seed: 0 }, 2000, false),
        "logistic" => (TaskSpec::default_for("logistic")?, 2000, false),
        "parity" | "staircase" | "teacher" => (TaskSpec::default_for(name)?, 1000, true),
        other => {
            return Err(Error::Config(format!(
                "grid task must be one of {}, got '{other}'",
                GRID_TASKS.join(", ")
            )))
        }
    };
    let mut base = RunConfig::new(task);
    base.steps = steps;
    Ok(if mlp {
        base.refresh = 10;
        base.gn_batch = BatchSize::Samples(1024);
        TaskPlan {
            base,
            curvature_basis: BasisKind::KronEigen,
            selection: Selection::TailLoss(50),
            adam_lr: 1e-3,
            gn_lr: 1e-3,
            gn_eps: vec![1e-4],
        }
    } else {
        TaskPlan {
            base,
            curvature_basis: BasisKind::Eigen,
            selection: Selection::FinalLoss,
            adam_lr: 1e-2,
            gn_lr: 1.0,
            gn_eps: if name == "logistic" { vec![0.0, 1e-3] } else { vec![0.0] },
        }
    })
}

fn cell_label(basis: BasisKind, batch: BatchSize) -> String {
    let b = match basis {
        BasisKind::Identity => "identity",
        BasisKind::Eigen => "eigen",
        BasisKind::KronEigen => "kron",
        BasisKind::Interpolated(_) => "interp",
    };
    format!("{b}_batch-{batch}")
}

/// Runs the 2×2 grid for one task. Each method is swept over step size
/// (factors of 3 then 2); Adam also over `halve_every ∈ {0, 1, 50, 200}`
/// and GN over the task's ε values.
pub fn grid_experiment(name: &str, opts: &GridOptions) -> Result<Vec<GridCell>> {
    let p = plan(name)?;
    let task = p.base.task.build()?;
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut cells = Vec::new();
    for basis in [p.curvature_basis, BasisKind::Identity] {
        for batch in [BatchSize::Full, BatchSize::Samples(1)] {
            let mut best_records = Vec::new();
            let mut best_configs = Vec::new();
            let mut row = Vec::new();
            for method in Method::ALL {
                let mut base = p.base.clone();
                base.basis = basis;
                base.batch = batch;
                if let Some(s) = opts.steps {
                    base.steps = s;
                }
                method.apply(&mut base);
                let mut grid;
                if method == Method::Adam {
                    base.eps = 1e-12;
                    grid = SweepGrid::new(
                        LrGrid::Auto {
                            center: p.adam_lr,
                            radius: opts.lr_radius,
                        },
                        opts.seeds.clone(),
                    );
                    grid.halve_every = vec![0, 1, 50, 200];
                } else {
                    grid = SweepGrid::new(
                        LrGrid::Auto {
                            center: p.gn_lr,
                            radius: opts.lr_radius,
                        },
                        opts.seeds.clone(),
                    );
                    grid.eps = p.gn_eps.clone();
                }
                let results = sweep_on(&task, &base, &grid, p.selection)?;
                let best = results.into_iter().find(|r| r.best).expect("sweep flags a best config");
                best_records.extend(best.records.iter().cloned());
                best_configs.push(best.config.clone());
                row.push((method, best));
            }
            let metrics = match &opts.out_dir {
                Some(dir) => {
                    let path = dir.join(format!("{name}_{}.csv", cell_label(basis, batch)));
                    emit_metrics(&best_records, &best_configs, &path)?;
                    Some(path)
                }
                None => None,
            };
            for (method, best) in row {
                cells.push(GridCell {
                    basis,
                    batch,
                    method,
                    best,
                    metrics: metrics.clone(),
                });
            }
        }
    }
    Ok(cells)
}
