//! Cartesian sweeps over step size, ε, β₂ and schedule, aggregated over seeds.

use rayon::prelude::*;

use super::{run_on, RunConfig, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::tasks::TaskInstance;

#[derive(Debug, Clone, PartialEq)]
pub enum LrGrid {
    Fixed(Vec<f64>),
    /// `center·3^k` for `|k| ≤ radius`, then `best·2^{±1}` around the winner.
    Auto { center: f64, radius: usize },
}

/// `center·factor^k` for `k = −radius..=radius`.
pub fn lr_grid(center: f64, radius: usize, factor: f64) -> Vec<f64> {
    let r = radius as i32;
    (-r..=r).map(|k| center * factor.powi(k)).collect()
}

/// Swept values. An empty list keeps the base config's value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub lrs: LrGrid,
    pub eps: Vec<f64>,
    pub beta2: Vec<f64>,
    /// 0 means a constant step size.
    pub halve_every: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn new(lrs: LrGrid, seeds: Vec<u64>) -> Self {
        SweepGrid {
            lrs,
            eps: Vec::new(),
            beta2: Vec::new(),
            halve_every: Vec::new(),
            seeds,
        }
    }
}

/// How configurations are ranked; lower is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Last logged loss, averaged over seeds.
    FinalLoss,
    /// Mean loss over the last `n` logged steps, averaged over seeds.
    TailLoss(usize),
    /// Steps until loss ≤ ratio × initial loss, averaged over seeds.
    StepsToLossRatio(f64),
    /// Steps until ‖θ − θ*‖ ≤ tol, averaged over seeds.
    StepsToDist(f64),
}

impl Selection {
    fn score(self, r: &TrajectoryRecord) -> f64 {
        let steps = |s: Option<usize>| s.map_or(f64::INFINITY, |s| s as f64);
        match self {
            Selection::FinalLoss => r.final_loss(),
            Selection::TailLoss(n) => r.tail_loss(n),
            Selection::StepsToLossRatio(ratio) => steps(r.steps_to_loss_ratio(ratio)),
            Selection::StepsToDist(tol) => steps(r.steps_to_dist(tol)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// The configuration, with `seed` set to the first seed.
    pub config: RunConfig,
    pub mean_final_loss: f64,
    /// Standard error of the final loss; `None` with fewer than two seeds.
    pub stderr: Option<f64>,
    /// Any seed diverged.
    pub diverged: bool,
    /// Selection score averaged over seeds.
    pub score: f64,
    pub best: bool,
    pub records: Vec<TrajectoryRecord>,
}

fn mean_stderr(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn or_base<T: Clone>(v: &[T], base: T) -> Vec<T> {
    if v.is_empty() {
        vec![base]
    } else {
        v.to_vec()
    }
}

fn expand(base: &RunConfig, lrs: &[f64], grid: &SweepGrid) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for &halve in &or_base(&grid.halve_every, base.halve_every) {
        for &beta2 in &or_base(&grid.beta2, base.beta2) {
            for &eps in &or_base(&grid.eps, base.eps) {
                for &lr in lrs {
                    let mut c = base.clone();
                    c.lr = lr;
                    c.eps = eps;
                    c.beta2 = beta2;
                    c.halve_every = halve;
                    c.seed = grid.seeds[0];
                    out.push(c);
                }
            }
        }
    }
    out
}

fn execute(task: &TaskInstance, configs: &[RunConfig], seeds: &[u64], sel: Selection) -> Result<Vec<SweepResult>> {
    let jobs: Vec<RunConfig> = configs
        .iter()
        .flat_map(|c| {
            seeds.iter().map(move |&s| {
                let mut c = c.clone();
                c.seed = s;
                c
            })
        })
        .collect();
    // `collect` keeps job order, so results do not depend on scheduling.
    let records: Vec<TrajectoryRecord> = jobs.par_iter().map(|c| run_on(task, c)).collect::<Result<_>>()?;
    Ok(configs
        .iter()
        .zip(records.chunks(seeds.len()))
        .map(|(c, recs)| {
            let finals: Vec<f64> = recs.iter().map(|r| r.final_loss()).collect();
            let (mean_final_loss, stderr) = mean_stderr(&finals);
            let score = recs.iter().map(|r| sel.score(r)).sum::<f64>() / recs.len() as f64;
            SweepResult {
                config: c.clone(),
                mean_final_loss,
                stderr,
                diverged: recs.iter().any(|r| r.diverged),
                score,
                best: false,
                records: recs.to_vec(),
            }
        })
        .collect())
}

fn better(a: &SweepResult, b: &SweepResult) -> bool {
    (a.score, a.mean_final_loss) < (b.score, b.mean_final_loss)
}

fn pick_best(results: &[SweepResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        if r.diverged || r.mean_final_loss.is_nan() {
            continue;
        }
        if best.is_none_or(|b| better(r, &results[b])) {
            best = Some(i);
        }
    }
    best
}

/// Builds the task once and sweeps it.
pub fn sweep(base: &RunConfig, grid: &SweepGrid, sel: Selection) -> Result<Vec<SweepResult>> {
    let task = base.task.build()?;
    sweep_on(&task, base, grid, sel)
}

/// Runs every configuration for every seed (in parallel), aggregates per
/// configuration and flags the best non-diverged one. Fails with
/// [`Error::NoStableConfiguration`] when every configuration diverged.
pub fn sweep_on(task: &TaskInstance, base: &RunConfig, grid: &SweepGrid, sel: Selection) -> Result<Vec<SweepResult>> {
    let results = evaluate(task, base, grid, sel)?;
    if best_of(&results).is_none() {
        return Err(Error::NoStableConfiguration);
    }
    Ok(results)
}

/// Like [`sweep_on`], but an all-diverged sweep is returned with no
/// result flagged.
pub fn evaluate(task: &TaskInstance, base: &RunConfig, grid: &SweepGrid, sel: Selection) -> Result<Vec<SweepResult>> {
    if grid.seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let coarse = match &grid.lrs {
        LrGrid::Fixed(v) => v.clone(),
        LrGrid::Auto { center, radius } => lr_grid(*center, *radius, 3.0),
    };
    if coarse.is_empty() {
        return Err(Error::Config("empty step-size grid".into()));
    }
    let configs = expand(base, &coarse, grid);
    for c in &configs {
        c.validate()?;
    }
    let mut results = execute(task, &configs, &grid.seeds, sel)?;
    if let LrGrid::Auto { .. } = grid.lrs {
        if let Some(b) = pick_best(&results) {
            let winner = results[b].config.clone();
            let refine: Vec<RunConfig> = [winner.lr / 2.0, winner.lr * 2.0]
                .into_iter()
                .map(|lr| RunConfig { lr, ..winner.clone() })
                .collect();
            results.extend(execute(task, &refine, &grid.seeds, sel)?);
        }
    }
    if let Some(idx) = pick_best(&results) {
        results[idx].best = true;
    }
    Ok(results)
}

/// The flagged best result.
pub fn best_of(results: &[SweepResult]) -> Option<&SweepResult> {
    results.iter().find(|r| r.best)
}
