//! Run configuration and its `key = value` text form.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::preconditioner::{BasisKind, LrSchedule, Power, ScalingKind};
use crate::tasks::{
    gen_block_covariance, gen_parity, gen_powerlaw_logistic, gen_random_quadratic, gen_staircase,
    gen_teacher_student, load_cifar10_binary, search_power_covariance, PowerDirection, PowerSearch, TaskInstance,
    DEFAULT_PARITY, DEFAULT_STAIRCASE, DEFAULT_STAIRCASE_DIM, FEATURE_HIDDEN, TEACHER_HIDDEN,
};

/// Trials allowed when a config asks for a searched covariance.
pub const POWER_SEARCH_TRIALS: usize = 10_000;

/// Every key accepted in config files and as a command-line override.
pub const KEYS: [&str; 24] = [
    "task", "dim", "k", "c", "p", "margin", "hidden", "segments", "data", "task-seed", "basis", "alpha", "refresh",
    "precond", "power", "beta2", "lr", "halve-every", "eps", "batch", "gn-batch", "steps", "seed", "diverge-factor",
];

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    /// Block covariance `[[11ᵀ, 0], [0, I]]`.
    Block { d_block: usize, seed: u64 },
    /// Random rotation of a log-spaced spectrum.
    Quadratic { d: usize, seed: u64 },
    /// Covariance found by the `r(Σ)` search.
    PowerCovariance { d: usize, direction: PowerDirection, margin: f64, seed: u64 },
    Logistic { d: usize, c: f64, p: f64 },
    Parity { d: usize, k: usize, seed: u64 },
    Staircase { d: usize, segments: Vec<(usize, usize)> },
    Teacher { d: usize, hidden: usize, seed: u64 },
    Cifar { path: PathBuf, hidden: usize },
}

impl TaskSpec {
    pub fn build(&self) -> Result<TaskInstance> {
        match self {
            TaskSpec::Block { d_block, seed } => gen_block_covariance(*d_block, *seed),
            TaskSpec::Quadratic { d, seed } => gen_random_quadratic(*d, *seed, None),
            TaskSpec::PowerCovariance {
                d,
                direction,
                margin,
                seed,
            } => {
                let mut s = PowerSearch::new(*d, *direction, POWER_SEARCH_TRIALS, *seed);
                s.margin = *margin;
                search_power_covariance(&s)
            }
            TaskSpec::Logistic { d, c, p } => gen_powerlaw_logistic(*d, *c, *p),
            TaskSpec::Parity { d, k, seed } => gen_parity(*d, *k, *seed),
            TaskSpec::Staircase { d, segments } => gen_staircase(*d, segments),
            TaskSpec::Teacher { d, hidden, seed } => gen_teacher_student(*d, *hidden, *seed),
            TaskSpec::Cifar { path, hidden } => load_cifar10_binary(path, *hidden),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TaskSpec::Block { .. } => "block",
            TaskSpec::Quadratic { .. } => "quadratic",
            TaskSpec::PowerCovariance {
                direction: PowerDirection::HalfWins,
                ..
            } => "power-half",
            TaskSpec::PowerCovariance { .. } => "power-one",
            TaskSpec::Logistic { .. } => "logistic",
            TaskSpec::Parity { .. } => "parity",
            TaskSpec::Staircase { .. } => "staircase",
            TaskSpec::Teacher { .. } => "teacher",
            TaskSpec::Cifar { .. } => "cifar",
        }
    }

    /// Default parameters for a task name.
    pub fn default_for(kind: &str) -> Result<TaskSpec> {
        Ok(match kind {
            "block" => TaskSpec::Block { d_block: 50, seed: 0 },
            "quadratic" => TaskSpec::Quadratic { d: 50, seed: 0 },
            "power-half" | "power-one" => TaskSpec::PowerCovariance {
                d: 5,
                direction: if kind == "power-half" {
                    PowerDirection::HalfWins
                } else {
                    PowerDirection::OneWins
                },
                margin: 1e-9,
                seed: 0,
            },
            "logistic" => TaskSpec::Logistic { d: 256, c: 0.6, p: 0.75 },
            "parity" => TaskSpec::Parity {
                d: DEFAULT_PARITY.0,
                k: DEFAULT_PARITY.1,
                seed: 0,
            },
            "staircase" => TaskSpec::Staircase {
                d: DEFAULT_STAIRCASE_DIM,
                segments: DEFAULT_STAIRCASE.to_vec(),
            },
            "teacher" => TaskSpec::Teacher {
                d: 16,
                hidden: TEACHER_HIDDEN,
                seed: 0,
            },
            "cifar" => TaskSpec::Cifar {
                path: PathBuf::from("data_batch_1.bin"),
                hidden: FEATURE_HIDDEN,
            },
            other => return Err(Error::Config(format!("unknown task '{other}'"))),
        })
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![("task", self.kind().to_string())];
        match self {
            TaskSpec::Block { d_block, seed } => {
                out.push(("dim", d_block.to_string()));
                out.push(("task-seed", seed.to_string()));
            }
            TaskSpec::Quadratic { d, seed } => {
                out.push(("dim", d.to_string()));
                out.push(("task-seed", seed.to_string()));
            }
            TaskSpec::PowerCovariance { d, margin, seed, .. } => {
                out.push(("dim", d.to_string()));
                out.push(("margin", margin.to_string()));
                out.push(("task-seed", seed.to_string()));
            }
            TaskSpec::Logistic { d, c, p } => {
                out.push(("dim", d.to_string()));
                out.push(("c", c.to_string()));
                out.push(("p", p.to_string()));
            }
            TaskSpec::Parity { d, k, seed } => {
                out.push(("dim", d.to_string()));
                out.push(("k", k.to_string()));
                out.push(("task-seed", seed.to_string()));
            }
            TaskSpec::Staircase { d, segments } => {
                out.push(("dim", d.to_string()));
                out.push(("segments", format_segments(segments)));
            }
            TaskSpec::Teacher { d, hidden, seed } => {
                out.push(("dim", d.to_string()));
                out.push(("hidden", hidden.to_string()));
                out.push(("task-seed", seed.to_string()));
            }
            TaskSpec::Cifar { path, hidden } => {
                out.push(("data", path.display().to_string()));
                out.push(("hidden", hidden.to_string()));
            }
        }
        out
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match (self, key) {
            (TaskSpec::Block { d_block: d, .. }, "dim")
            | (TaskSpec::Quadratic { d, .. }, "dim")
            | (TaskSpec::PowerCovariance { d, .. }, "dim")
            | (TaskSpec::Logistic { d, .. }, "dim")
            | (TaskSpec::Parity { d, .. }, "dim")
            | (TaskSpec::Staircase { d, .. }, "dim")
            | (TaskSpec::Teacher { d, .. }, "dim") => *d = parse_value(key, value)?,
            (TaskSpec::Block { seed, .. }, "task-seed")
            | (TaskSpec::Quadratic { seed, .. }, "task-seed")
            | (TaskSpec::PowerCovariance { seed, .. }, "task-seed")
            | (TaskSpec::Parity { seed, .. }, "task-seed")
            | (TaskSpec::Teacher { seed, .. }, "task-seed") => *seed = parse_value(key, value)?,
            (TaskSpec::PowerCovariance { margin, .. }, "margin") => *margin = parse_value(key, value)?,
            (TaskSpec::Logistic { c, .. }, "c") => *c = parse_value(key, value)?,
            (TaskSpec::Logistic { p, .. }, "p") => *p = parse_value(key, value)?,
            (TaskSpec::Parity { k, .. }, "k") => *k = parse_value(key, value)?,
            (TaskSpec::Staircase { segments, .. }, "segments") => *segments = parse_segments(value)?,
            (TaskSpec::Teacher { hidden, .. }, "hidden") | (TaskSpec::Cifar { hidden, .. }, "hidden") => {
                *hidden = parse_value(key, value)?
            }
            (TaskSpec::Cifar { path, .. }, "data") => *path = PathBuf::from(value),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn format_segments(s: &[(usize, usize)]) -> String {
    s.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(",")
}

fn parse_segments(v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|part| {
            let (a, b) = part
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("segment '{part}' is not lo-hi")))?;
            Ok((parse_value("segments", a.trim())?, parse_value("segments", b.trim())?))
        })
        .collect()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

/// Batch size, or the full population (closed form) / fixed large set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Samples(usize),
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Full => write!(f, "full"),
            BatchSize::Samples(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for BatchSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(BatchSize::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(BatchSize::Samples(n)),
            _ => Err(Error::Config(format!("batch size '{s}' must be 'full' or a positive integer"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precond {
    Adam,
    Gn,
}

/// Everything a single run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub basis: BasisKind,
    /// Curvature refresh interval in steps.
    pub refresh: usize,
    pub precond: Precond,
    pub power: Power,
    pub beta2: f64,
    pub lr: f64,
    /// Halve the step size every this many steps; 0 keeps it constant.
    pub halve_every: usize,
    pub eps: f64,
    pub batch: BatchSize,
    pub gn_batch: BatchSize,
    pub steps: usize,
    pub seed: u64,
    /// A run is flagged diverged once its loss exceeds this multiple of the
    /// initial loss (or stops being finite).
    pub diverge_factor: f64,
}

impl RunConfig {
    pub fn new(task: TaskSpec) -> Self {
        RunConfig {
            task,
            basis: BasisKind::Eigen,
            refresh: 1,
            precond: Precond::Gn,
            power: Power::Inv,
            beta2: 0.999,
            lr: 1.0,
            halve_every: 0,
            eps: 0.0,
            batch: BatchSize::Full,
            gn_batch: BatchSize::Full,
            steps: 100,
            seed: 0,
            diverge_factor: 1e6,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        if self.halve_every == 0 {
            LrSchedule::Constant(self.lr)
        } else {
            LrSchedule::StepDecay {
                eta0: self.lr,
                halve_every: self.halve_every,
            }
        }
    }

    pub fn scaling(&self) -> ScalingKind {
        match self.precond {
            Precond::Adam => ScalingKind::Adam {
                beta2: self.beta2,
                power: self.power,
            },
            Precond::Gn => ScalingKind::Gn { power: self.power },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.refresh == 0 {
            return bad("refresh must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("eps = {} must be nonnegative", self.eps));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("beta2 = {} outside [0, 1)", self.beta2));
        }
        if !(self.diverge_factor > 1.0) {
            return bad(format!("diverge-factor = {} must exceed 1", self.diverge_factor));
        }
        if let BasisKind::Interpolated(a) = self.basis {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("alpha = {a} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Canonical `(key, value)` list, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = self.task.pairs();
        let (basis, alpha) = match self.basis {
            BasisKind::Identity => ("identity", None),
            BasisKind::Eigen => ("eigen", None),
            BasisKind::KronEigen => ("kron", None),
            BasisKind::Interpolated(a) => ("interp", Some(a)),
        };
        out.push(("basis", basis.into()));
        if let Some(a) = alpha {
            out.push(("alpha", a.to_string()));
        }
        out.push(("refresh", self.refresh.to_string()));
        out.push((
            "precond",
            match self.precond {
                Precond::Adam => "adam",
                Precond::Gn => "gn",
            }
            .into(),
        ));
        out.push(("power", self.power.value().to_string()));
        out.push(("beta2", self.beta2.to_string()));
        out.push(("lr", self.lr.to_string()));
        out.push(("halve-every", self.halve_every.to_string()));
        out.push(("eps", self.eps.to_string()));
        out.push(("batch", self.batch.to_string()));
        out.push(("gn-batch", self.gn_batch.to_string()));
        out.push(("steps", self.steps.to_string()));
        out.push(("seed", self.seed.to_string()));
        out.push(("diverge-factor", self.diverge_factor.to_string()));
        let rank = |k: &str| KEYS.iter().position(|x| *x == k).unwrap_or(KEYS.len());
        out.sort_by_key(|(k, _)| rank(k));
        out
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses `key = value` lines; `#` starts a comment. The task is built
    /// from `task` (default `quadratic`) and every other key overrides a
    /// default.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let task = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "task")
            .map_or("quadratic", |(_, v)| v.as_str());
        let cfg = RunConfig::new(TaskSpec::default_for(task)?);
        cfg.with_overrides(pairs)
    }

    /// Applies overrides in order. Changing `task` resets the task
    /// parameters to that task's defaults.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = self.clone();
        let mut alpha = match cfg.basis {
            BasisKind::Interpolated(a) => a,
            _ => 1.0,
        };
        let mut interp = matches!(cfg.basis, BasisKind::Interpolated(_));
        if let Some((_, t)) = pairs.iter().rev().find(|(k, _)| k == "task") {
            if t != cfg.task.kind() {
                cfg.task = TaskSpec::default_for(t)?;
            }
        }
        for (key, value) in pairs {
            let (key, value) = (key.as_str(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
            if key == "task" || cfg.task.apply(key, value)? {
                continue;
            }
            match key {
                "basis" => {
                    interp = false;
                    cfg.basis = match value {
                        "identity" => BasisKind::Identity,
                        "eigen" => BasisKind::Eigen,
                        "kron" => BasisKind::KronEigen,
                        "interp" => {
                            interp = true;
                            BasisKind::Interpolated(alpha)
                        }
                        _ => return Err(Error::Config(format!("unknown basis '{value}'"))),
                    }
                }
                "alpha" => alpha = parse_value(key, value)?,
                "refresh" => cfg.refresh = parse_value(key, value)?,
                "precond" => {
                    cfg.precond = match value {
                        "adam" => Precond::Adam,
                        "gn" => Precond::Gn,
                        _ => return Err(Error::Config(format!("unknown precond '{value}'"))),
                    }
                }
                "power" => {
                    let p: f64 = parse_value(key, value)?;
                    // Accept both the exponent and its magnitude.
                    let p = if p > 0.0 { -p } else { p };
                    cfg.power = Power::from_value(p).map_err(|e| Error::Config(e.to_string()))?;
                }
                "beta2" => cfg.beta2 = parse_value(key, value)?,
                "lr" => cfg.lr = parse_value(key, value)?,
                "halve-every" => cfg.halve_every = parse_value(key, value)?,
                "eps" => cfg.eps = parse_value(key, value)?,
                "batch" => cfg.batch = value.parse()?,
                "gn-batch" => cfg.gn_batch = value.parse()?,
                "steps" => cfg.steps = parse_value(key, value)?,
                "seed" => cfg.seed = parse_value(key, value)?,
                "diverge-factor" => cfg.diverge_factor = parse_value(key, value)?,
                _ => {
                    return Err(Error::Config(format!(
                        "key '{key}' does not apply to task '{}'",
                        cfg.task.kind()
                    )))
                }
            }
        }
        if interp {
            cfg.basis = BasisKind::Interpolated(alpha);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of the configuration without its seed, so that runs differing
    /// only in seed share an id.
    pub fn run_id(&self) -> String {
        let text: String = self
            .pairs()
            .iter()
            .filter(|(k, _)| *k != "seed")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Splits `key = value` lines, ignoring blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
