use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::sweep::{ArmSummary, SweepRecord};
use crate::policy::InitKind;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ARMS_FILE: &str = "arms.csv";
pub const MANIFEST_FILE: &str = "run-manifest.json";

fn json_err(e: serde_json::Error) -> Error {
    Error::InvalidArgument(format!("serialization failed: {e}"))
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(json_err)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    std::fs::write(path, to_jsonl(items)?).map_err(|e| Error::io(path, e))
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Flat per-trial row for plotting.
#[derive(Serialize)]
struct SweepRow<'a> {
    arm_index: usize,
    arm: &'a str,
    trial: usize,
    seed: u64,
    n: usize,
    d_noise: usize,
    train_levels: usize,
    test_levels: usize,
    depth: usize,
    width: usize,
    init_kind: InitKind,
    init_scale: f64,
    step_size: f64,
    step_size_used: f64,
    halvings: u32,
    diverged: bool,
    steps: usize,
    converged: bool,
    train_cost: Option<f64>,
    test_cost: Option<f64>,
    gap: Option<f64>,
    spectral: Option<f64>,
    frobenius: Option<f64>,
    nuclear: Option<f64>,
    phi_frobenius: Option<f64>,
    phi_l1: Option<f64>,
}

impl<'a> From<&'a SweepRecord> for SweepRow<'a> {
    fn from(r: &'a SweepRecord) -> Self {
        SweepRow {
            arm_index: r.arm_index,
            arm: &r.arm,
            trial: r.trial,
            seed: r.spec.seed,
            n: r.spec.n,
            d_noise: r.spec.d_noise,
            train_levels: r.spec.train_levels,
            test_levels: r.spec.test_levels,
            depth: r.spec.depth,
            width: r.spec.width,
            init_kind: r.spec.init_kind,
            init_scale: r.spec.init_scale,
            step_size: r.spec.step_size,
            step_size_used: r.step_size_used,
            halvings: r.halvings,
            diverged: r.diverged,
            steps: r.steps,
            converged: r.converged,
            train_cost: r.train_cost,
            test_cost: r.test_cost,
            gap: r.gap,
            spectral: r.spectral,
            frobenius: r.frobenius,
            nuclear: r.nuclear,
            phi_frobenius: r.phi_frobenius,
            phi_l1: r.phi_l1,
        }
    }
}

#[derive(Serialize)]
pub struct Manifest<'a, S: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'a str,
    pub master_seed: u64,
    pub config: &'a ExperimentConfig,
    pub files: Vec<&'static str>,
    pub results: S,
}

pub fn write_manifest<S: Serialize>(dir: &Path, manifest: &Manifest<S>) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, manifest).map_err(json_err)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `records.jsonl` and `summary.csv` for a sweep.
pub fn write_records(records: &[SweepRecord], dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_jsonl(records, &dir.join(RECORDS_FILE))?;
    let rows: Vec<SweepRow> = records.iter().map(SweepRow::from).collect();
    write_csv(&rows, &dir.join(SUMMARY_FILE))
}

pub fn write_arm_summaries(summaries: &[ArmSummary], dir: &Path) -> Result<()> {
    write_csv(summaries, &dir.join(ARMS_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::ExperimentKind;
    use crate::experiment::sweep::{run_sweep, summarize};

    #[test]
    fn records_and_table_written_identically_twice() {
        let mut cfg = ExperimentConfig::default();
        cfg.lqr.n = 2;
        cfg.family.d_noise = vec![3];
        cfg.family.test_levels = 3;
        cfg.policy.init_kind = InitKind::Zero;
        cfg.policy.max_steps = 10;
        cfg.trials = 2;
        let recs = run_sweep(&cfg, ExperimentKind::SweepNoiseDim, false).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            write_records(&recs, d.path()).unwrap();
            write_arm_summaries(&summarize(&recs), d.path()).unwrap();
        }
        for f in [RECORDS_FILE, SUMMARY_FILE, ARMS_FILE] {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            assert_eq!(a, std::fs::read(dirs[1].path().join(f)).unwrap());
            assert!(!a.is_empty());
        }
        let text = std::fs::read_to_string(dirs[0].path().join(RECORDS_FILE)).unwrap();
        let back: Vec<SweepRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, recs);
        let table = std::fs::read_to_string(dirs[0].path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(table.lines().count(), 3);
        assert!(table.starts_with("arm_index,arm,trial,seed"));
    }

    #[test]
    fn unwritable_directory_reports_path() {
        let err = write_records(&[], Path::new("/proc/definitely/not/here")).unwrap_err();
        assert!(err.to_string().contains("/proc/definitely"));
    }
}
