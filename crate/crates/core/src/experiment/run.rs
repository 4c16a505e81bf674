//! One call per subcommand: load, run, write every output file.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::experiment::config::{load_config, ExperimentConfig, ExperimentKind};
use crate::experiment::output::{
    ensure_dir, write_arm_summaries, write_csv, write_jsonl, write_manifest, write_records, Manifest, ARMS_FILE,
    RECORDS_FILE, SUMMARY_FILE,
};
use crate::experiment::report::{run_measures_report, run_verify_theorem, MeasuresReport, TheoremCell};
use crate::experiment::sweep::{gap_slope, run_sweep, summarize, ArmSummary};

pub const DEFAULT_OUT: &str = "obslab-out";

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Record per-trial wall time (makes records run-dependent).
    pub timing: bool,
}

#[derive(Serialize)]
struct SweepResults<'a> {
    arms: &'a [ArmSummary],
    log_log_gap_slope: Option<f64>,
}

#[derive(Serialize)]
struct TheoremRow {
    index: usize,
    n: usize,
    p: usize,
    m: usize,
    psi: f64,
    trials: usize,
    closed_form: f64,
    e1: f64,
    e2: f64,
    empirical_mean: f64,
    std_error: f64,
    z_score: f64,
    rerun_z_score: Option<f64>,
    passed: bool,
}

impl From<&TheoremCell> for TheoremRow {
    fn from(c: &TheoremCell) -> Self {
        TheoremRow {
            index: c.index,
            n: c.params.n,
            p: c.params.p,
            m: c.params.m,
            psi: c.params.psi,
            trials: c.trials,
            closed_form: c.closed_form,
            e1: c.e1,
            e2: c.e2,
            empirical_mean: c.run.empirical_mean,
            std_error: c.run.std_error,
            z_score: c.run.z_score,
            rerun_z_score: c.rerun.as_ref().map(|r| r.z_score),
            passed: c.passed,
        }
    }
}

#[derive(Serialize)]
struct MeasureRow {
    measure: String,
    value: Option<f64>,
    margin_mean: Option<f64>,
    margin_min: Option<f64>,
    margin_q1: Option<f64>,
    margin_median: Option<f64>,
    margin_q3: Option<f64>,
    margin_max: Option<f64>,
    skipped: Option<String>,
}

fn measure_rows(rep: &MeasuresReport) -> Vec<MeasureRow> {
    let plain = |measure: &str, value: Option<f64>| MeasureRow {
        measure: measure.to_string(),
        value,
        margin_mean: None,
        margin_min: None,
        margin_q1: None,
        margin_median: None,
        margin_q3: None,
        margin_max: None,
        skipped: None,
    };
    let mut rows = vec![
        plain("phi_frobenius", Some(rep.phi_frobenius)),
        plain("phi_l1", Some(rep.phi_l1)),
        plain("product_spectral", Some(rep.products.spectral)),
        plain("product_frobenius", Some(rep.products.frobenius)),
        plain("product_nuclear", Some(rep.products.nuclear)),
        plain("product_l1", Some(rep.products.l1)),
        plain("composed_spectral", Some(rep.composed.spectral)),
        plain("composed_nuclear", Some(rep.composed.nuclear)),
        plain("r_spectral_l1", rep.r_spectral_l1),
        plain("r_distance", rep.r_distance),
        plain("r_spectral_fro", rep.r_spectral_fro),
    ];
    for m in &rep.margins {
        let s = m.summary;
        rows.push(MeasureRow {
            measure: format!("margin_{}", serde_json::to_value(m.measure).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
            value: m.measure_value,
            margin_mean: s.map(|s| s.mean),
            margin_min: s.map(|s| s.min),
            margin_q1: s.map(|s| s.q1),
            margin_median: s.map(|s| s.median),
            margin_q3: s.map(|s| s.q3),
            margin_max: s.map(|s| s.max),
            skipped: m.skipped.clone(),
        });
    }
    rows
}

/// Output directory: command line, then config, then [`DEFAULT_OUT`].
pub fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs `kind` on an already loaded config and writes its outputs to `dir`.
pub fn execute(cfg: &ExperimentConfig, kind: ExperimentKind, dir: &Path, timing: bool) -> Result<()> {
    cfg.validate(kind)?;
    ensure_dir(dir)?;
    match kind {
        ExperimentKind::VerifyTheorem => {
            let rep = run_verify_theorem(cfg)?;
            write_jsonl(&rep.cells, &dir.join(RECORDS_FILE))?;
            let rows: Vec<TheoremRow> = rep.cells.iter().map(TheoremRow::from).collect();
            write_csv(&rows, &dir.join(SUMMARY_FILE))?;
            manifest(dir, cfg, kind, vec![RECORDS_FILE, SUMMARY_FILE], &rep)
        }
        ExperimentKind::MeasuresReport => {
            let (rep, margins) = run_measures_report(cfg)?;
            write_jsonl(&margins, &dir.join(RECORDS_FILE))?;
            write_csv(&measure_rows(&rep), &dir.join(SUMMARY_FILE))?;
            manifest(dir, cfg, kind, vec![RECORDS_FILE, SUMMARY_FILE], &rep)
        }
        _ => {
            let records = run_sweep(cfg, kind, timing)?;
            write_records(&records, dir)?;
            let arms = summarize(&records);
            write_arm_summaries(&arms, dir)?;
            let slope = gap_slope(cfg, kind, &arms)?;
            let results = SweepResults { arms: &arms, log_log_gap_slope: slope };
            manifest(dir, cfg, kind, vec![RECORDS_FILE, SUMMARY_FILE, ARMS_FILE], &results)
        }
    }
}

fn manifest<S: Serialize>(dir: &Path, cfg: &ExperimentConfig, kind: ExperimentKind, files: Vec<&'static str>, results: S) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: kind.name(),
        master_seed: cfg.seed,
        config: cfg,
        files,
        results,
    };
    write_manifest(dir, &m).map(|_| ())
}

/// Loads `config`, applies overrides, runs and writes; returns the output directory.
pub fn run_from_file(config: &Path, kind: ExperimentKind, overrides: &Overrides) -> Result<PathBuf> {
    let mut cfg = load_config(config, kind)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate(kind)?;
    let dir = out_dir(&cfg);
    execute(&cfg, kind, &dir, overrides.timing)?;
    Ok(dir)
}
