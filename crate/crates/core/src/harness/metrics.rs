//! Metric files: one CSV row per logged step plus a config sidecar per run id.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::{RunConfig, StepRecord, TrajectoryRecord};
use crate::error::{Error, Result};

pub const HEADER: [&str; 7] = ["run_id", "seed", "step", "loss", "grad_norm", "dist_to_opt", "lr"];

/// `<dir>/<stem>.<run_id>.cfg` next to the metrics file.
pub fn sidecar_path(metrics: &Path, run_id: &str) -> PathBuf {
    let stem = metrics.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    metrics.with_file_name(format!("{stem}.{run_id}.cfg"))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Writes every row of every record, and one sidecar per distinct run id
/// holding that run's configuration text. `configs` is matched to records
/// by run id; records without a config get no sidecar.
/// Shortest exact representation; scientific outside `[1e-4, 1e15)`.
fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

pub fn emit_metrics(records: &[TrajectoryRecord], configs: &[RunConfig], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        for row in &r.rows {
            w.write_record([
                r.run_id.clone(),
                r.seed.to_string(),
                row.step.to_string(),
                num(row.loss),
                num(row.grad_norm),
                row.dist_to_opt.map_or(String::new(), num),
                num(row.lr),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut written = BTreeSet::new();
    for cfg in configs {
        let id = cfg.run_id();
        if records.iter().any(|r| r.run_id == id) && !written.contains(&id) {
            let side = sidecar_path(path, &id);
            let diverged: Vec<String> = records
                .iter()
                .filter(|r| r.run_id == id && r.diverged)
                .map(|r| r.seed.to_string())
                .collect();
            let mut text = format!("# run_id = {id}\n# diverged-seeds = {}\n", diverged.join(","));
            text.push_str(
                &cfg.pairs()
                    .iter()
                    .filter(|(k, _)| *k != "seed")
                    .map(|(k, v)| format!("{k} = {v}\n"))
                    .collect::<String>(),
            );
            std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
            written.insert(id);
        }
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Format(format!("{}:{line}: bad {name} '{v}'", path.display())))
}

fn diverged_seeds(side: &Path) -> Option<Vec<u64>> {
    let text = std::fs::read_to_string(side).ok()?;
    let line = text.lines().find_map(|l| l.strip_prefix("# diverged-seeds ="))?;
    Some(line.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

/// Reads a metrics file back into records, grouped by `(run_id, seed)` in
/// order of first appearance. Diverged flags come from the sidecars; without
/// one, a record counts as diverged when its last row is non-finite.
pub fn read_metrics(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    let mut out: Vec<TrajectoryRecord> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let run_id = rec[0].to_string();
        let seed: u64 = field(path, line, "seed", &rec[1])?;
        let row = StepRecord {
            step: field(path, line, "step", &rec[2])?,
            loss: field(path, line, "loss", &rec[3])?,
            grad_norm: field(path, line, "grad_norm", &rec[4])?,
            dist_to_opt: if rec[5].is_empty() {
                None
            } else {
                Some(field(path, line, "dist_to_opt", &rec[5])?)
            },
            lr: field(path, line, "lr", &rec[6])?,
        };
        match out.iter_mut().find(|r| r.run_id == run_id && r.seed == seed) {
            Some(r) => r.rows.push(row),
            None => out.push(TrajectoryRecord {
                run_id,
                seed,
                rows: vec![row],
                diverged: false,
            }),
        }
    }
    for r in &mut out {
        r.diverged = match diverged_seeds(&sidecar_path(path, &r.run_id)) {
            Some(seeds) => seeds.contains(&r.seed),
            None => r.rows.last().is_some_and(|row| !row.loss.is_finite() || !row.grad_norm.is_finite()),
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run, TaskSpec};

    #[test]
    fn empty_list_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        emit_metrics(&[], &[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "run_id,seed,step,loss,grad_norm,dist_to_opt,lr\n");
        assert!(read_metrics(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut cfg = RunConfig::new(TaskSpec::Quadratic { d: 6, seed: 2 });
        cfg.steps = 3;
        cfg.lr = 0.3;
        cfg.batch = crate::harness::BatchSize::Samples(1);
        let a = run(&cfg).unwrap();
        let mut cfg_b = cfg.clone();
        cfg_b.seed = 5;
        let b = run(&cfg_b).unwrap();
        emit_metrics(&[a.clone(), b.clone()], &[cfg.clone()], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(read_metrics(&p).unwrap(), vec![a.clone(), b]);
        let side = std::fs::read_to_string(sidecar_path(&p, &a.run_id)).unwrap();
        assert!(side.contains("lr = 0.3"));
        assert!(side.starts_with(&format!("# run_id = {}", a.run_id)));
        let mut as_config = RunConfig::parse(&side).unwrap();
        as_config.seed = cfg.seed;
        assert_eq!(as_config, cfg);
    }

    #[test]
    fn diverged_flag_survives_through_the_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut cfg = RunConfig::new(TaskSpec::Block { d_block: 3, seed: 0 });
        cfg.basis = crate::preconditioner::BasisKind::Identity;
        cfg.lr = 5.0;
        cfg.steps = 50;
        let r = run(&cfg).unwrap();
        assert!(r.diverged && r.final_loss().is_finite());
        emit_metrics(std::slice::from_ref(&r), &[cfg], &p).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), vec![r]);
    }

    #[test]
    fn special_values_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rec = TrajectoryRecord {
            run_id: "x".into(),
            seed: 1,
            rows: vec![
                StepRecord { step: 0, loss: 0.1 + 0.2, grad_norm: 1e-310, dist_to_opt: None, lr: 1.0 / 3.0 },
                StepRecord { step: 1, loss: f64::INFINITY, grad_norm: f64::NAN, dist_to_opt: Some(2.0), lr: 0.5 },
            ],
            diverged: true,
        };
        emit_metrics(std::slice::from_ref(&rec), &[], &p).unwrap();
        let back = read_metrics(&p).unwrap().remove(0);
        assert!(back.diverged);
        assert_eq!(back.rows[0], rec.rows[0]);
        assert_eq!(back.rows[1].loss, f64::INFINITY);
        assert!(back.rows[1].grad_norm.is_nan());
    }

    #[test]
    fn io_errors_carry_the_path() {
        let p = Path::new("/nonexistent-dir/m.csv");
        match emit_metrics(&[], &[], p) {
            Err(Error::Io { path, .. }) => assert_eq!(path, p),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_metrics(p), Err(Error::Io { .. })));
    }
}
