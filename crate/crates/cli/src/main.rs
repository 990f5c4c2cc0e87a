use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use eigenprecond::harness::{
    self, emit_metrics, evaluate, grid_experiment, parse_pairs, verify::verify_all, GridOptions, LrGrid, RunConfig,
    Selection, SweepGrid, SweepResult,
};
use eigenprecond::tasks::parse_cifar10_binary;

#[derive(Parser)]
#[command(name = "eigenprecond", version, about = "Basis-rotated Adam and Gauss-Newton preconditioning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its metrics.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Sweep step size, ε, β₂ and schedule over several seeds.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// {curvature basis, identity} × {full batch, batch 1} comparison of
    /// Adam, GN⁻¹ and GN^{−1/2} on one task.
    Grid {
        /// One of teacher, parity, staircase, quadratic, logistic.
        task: String,
        #[arg(long, default_value = "grid")]
        out_dir: PathBuf,
        /// Override the task's step count.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "0,1", value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Coarse step-size grid half-width, in factors of 3.
        #[arg(long, default_value_t = 4)]
        lr_radius: usize,
    },
    /// Closed-form and property checks of the theory.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Load a CIFAR-10 binary batch and optionally train on it.
    Cifar {
        path: PathBuf,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        /// Training steps (Adam, identity basis); 0 only loads the file.
        #[arg(long, default_value_t = 0)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value = "128")]
        batch: String,
        #[arg(long, default_value = "cifar.csv")]
        out: PathBuf,
    },
}

/// A config file, then `--set` pairs, then the named flags, each
/// overriding the previous.
#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// identity, eigen, kron or interp.
    #[arg(long)]
    basis: Option<String>,
    /// adam or gn.
    #[arg(long)]
    precond: Option<String>,
    /// 1 or 0.5 (the sign is optional).
    #[arg(long, allow_hyphen_values = true)]
    power: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    /// Positive integer or `full`.
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    gn_batch: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Any other config key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        for s in &self.set {
            let (k, v) = s.split_once('=').with_context(|| format!("--set '{s}' is not key=value"))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        let flags = [
            ("task", &self.task),
            ("basis", &self.basis),
            ("precond", &self.precond),
            ("power", &self.power),
            ("lr", &self.lr),
            ("eps", &self.eps),
            ("beta2", &self.beta2),
            ("batch", &self.batch),
            ("gn-batch", &self.gn_batch),
            ("steps", &self.steps),
            ("seed", &self.seed),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                pairs.push((k.into(), v.clone()));
            }
        }
        Ok(RunConfig::from_pairs(&pairs)?)
    }
}

#[derive(Args)]
struct GridArgs {
    /// Explicit step sizes; otherwise a factor-3 grid around the config's lr.
    #[arg(long, value_delimiter = ',')]
    lrs: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    lr_radius: usize,
    #[arg(long, value_delimiter = ',')]
    eps_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    beta2_grid: Vec<f64>,
    /// Halving intervals; 0 is a constant step size.
    #[arg(long, value_delimiter = ',')]
    halve_every_grid: Vec<usize>,
    #[arg(long, default_value = "0", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// final, tail:N, loss-ratio:R or dist:TOL.
    #[arg(long, default_value = "final", value_parser = parse_selection)]
    select: Selection,
}

fn parse_selection(s: &str) -> std::result::Result<Selection, String> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    let num = |a: &str| a.parse::<f64>().map_err(|_| format!("'{s}' needs a numeric argument"));
    match name {
        "final" => Ok(Selection::FinalLoss),
        "tail" => arg.parse().map(Selection::TailLoss).map_err(|_| format!("'{s}' needs a window")),
        "loss-ratio" => num(arg).map(Selection::StepsToLossRatio),
        "dist" => num(arg).map(Selection::StepsToDist),
        _ => Err(format!("unknown selection '{s}'")),
    }
}

fn fmt_stderr(r: &SweepResult) -> String {
    r.stderr.map_or("-".into(), |s| format!("{s:.3e}"))
}

fn print_results(results: &[SweepResult]) {
    println!("{:>10} {:>10} {:>8} {:>6} {:>12} {:>10} {:>12} {:>9}", "lr", "eps", "beta2", "halve", "final_loss", "stderr", "score", "");
    for r in results {
        let c = &r.config;
        let tag = if r.best {
            "best"
        } else if r.diverged {
            "diverged"
        } else {
            ""
        };
        println!(
            "{:>10.3e} {:>10.1e} {:>8} {:>6} {:>12.4e} {:>10} {:>12.4e} {:>9}",
            c.lr,
            c.eps,
            c.beta2,
            c.halve_every,
            r.mean_final_loss,
            fmt_stderr(r),
            r.score,
            tag
        );
    }
}

fn run_cmd(config: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = config.load()?;
    let record = harness::run(&cfg)?;
    emit_metrics(std::slice::from_ref(&record), std::slice::from_ref(&cfg), out)?;
    println!(
        "run {} seed {}: loss {:.6e} -> {:.6e} after {} steps{}",
        record.run_id,
        record.seed,
        record.initial_loss(),
        record.final_loss(),
        record.rows.len(),
        if record.diverged { " (diverged)" } else { "" }
    );
    println!("metrics: {}", out.display());
    Ok(())
}

fn sweep_cmd(config: &ConfigArgs, g: &GridArgs, out: &Path) -> Result<()> {
    let base = config.load()?;
    let lrs = if g.lrs.is_empty() {
        LrGrid::Auto {
            center: base.lr,
            radius: g.lr_radius,
        }
    } else {
        LrGrid::Fixed(g.lrs.clone())
    };
    let mut grid = SweepGrid::new(lrs, g.seeds.clone());
    grid.eps = g.eps_grid.clone();
    grid.beta2 = g.beta2_grid.clone();
    grid.halve_every = g.halve_every_grid.clone();
    let task = base.task.build()?;
    let results = evaluate(&task, &base, &grid, g.select)?;
    let records: Vec<_> = results.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let configs: Vec<_> = results.iter().map(|r| r.config.clone()).collect();
    emit_metrics(&records, &configs, out)?;
    print_results(&results);
    if harness::best_of(&results).is_none() {
        println!("no stable configuration: every configuration diverged");
    }
    println!("metrics: {}", out.display());
    Ok(())
}

fn grid_cmd(task: &str, opts: &GridOptions) -> Result<()> {
    let cells = grid_experiment(task, opts)?;
    println!("{:>9} {:>6} {:>7} {:>10} {:>6} {:>12} {:>10}", "basis", "batch", "method", "lr", "halve", "final_loss", "stderr");
    for c in &cells {
        let b = &c.best;
        println!(
            "{:>9} {:>6} {:>7} {:>10.3e} {:>6} {:>12.4e} {:>10}",
            format!("{:?}", c.basis).to_lowercase(),
            c.batch.to_string(),
            c.method.name(),
            b.config.lr,
            b.config.halve_every,
            b.mean_final_loss,
            fmt_stderr(b)
        );
    }
    println!("metrics: {}", opts.out_dir.as_ref().expect("grid always writes").display());
    Ok(())
}

fn verify_cmd(seed: u64) {
    let checks = verify_all(seed);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} checks passed", checks.len());
}

fn cifar_cmd(path: &Path, hidden: usize, steps: usize, lr: f64, batch: &str, out: &Path) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (xs, ys) = parse_cifar10_binary(&bytes)?;
    let mut counts = [0usize; 10];
    for r in 0..ys.nrows() {
        if let Some(k) = (0..10).find(|&k| ys[(r, k)] == 1.0) {
            counts[k] += 1;
        }
    }
    println!("{} images of {} values; labels per class {counts:?}", xs.nrows(), xs.ncols());
    if steps == 0 {
        return Ok(());
    }
    let pairs: Vec<(String, String)> = [
        ("task", "cifar".to_string()),
        ("data", path.display().to_string()),
        ("hidden", hidden.to_string()),
        ("basis", "identity".into()),
        ("precond", "adam".into()),
        ("power", "0.5".into()),
        ("eps", "1e-8".into()),
        ("lr", lr.to_string()),
        ("batch", batch.into()),
        ("gn-batch", batch.into()),
        ("steps", steps.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let cfg = RunConfig::from_pairs(&pairs)?;
    let record = harness::run(&cfg)?;
    emit_metrics(std::slice::from_ref(&record), std::slice::from_ref(&cfg), out)?;
    println!(
        "loss {:.6e} -> {:.6e} after {steps} steps{}; metrics: {}",
        record.initial_loss(),
        record.final_loss(),
        if record.diverged { " (diverged)" } else { "" },
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => run_cmd(&config, &out),
        Command::Sweep { config, grid, out } => sweep_cmd(&config, &grid, &out),
        Command::Grid {
            task,
            out_dir,
            steps,
            seeds,
            lr_radius,
        } => {
            if seeds.is_empty() {
                bail!("--seeds must not be empty");
            }
            let opts = GridOptions {
                steps,
                seeds,
                lr_radius,
                out_dir: Some(out_dir),
            };
            grid_cmd(&task, &opts)
        }
        Command::Verify { seed } => {
            verify_cmd(seed);
            Ok(())
        }
        Command::Cifar {
            path,
            hidden,
            steps,
            lr,
            batch,
            out,
        } => cifar_cmd(&path, hidden, steps, lr, &batch, &out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
