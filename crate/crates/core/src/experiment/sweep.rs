use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, ExperimentKind};
use crate::lqr::scaled_orthogonal_problem;
use crate::mat::{mix_seed, norms, SeededRng};
use crate::measures::{phi_frobenius_count, phi_l1_count, WeightStack};
use crate::obs::{generalization_gap, make_family, test_thetas, train_thetas, LevelsObjective};
use crate::policy::{chain_shapes, compose, init_policy, train, InitKind, LayeredPolicy, TrainOutcome};

const LQR_STREAM: u64 = 1;
const FAMILY_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

/// Depth used by width sweeps: one hidden layer of the swept width.
pub const WIDTH_SWEEP_DEPTH: usize = 2;

/// Everything needed to rerun one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub seed: u64,
    pub n: usize,
    pub a_scale: f64,
    pub d_noise: usize,
    pub train_levels: usize,
    pub test_levels: usize,
    pub depth: usize,
    pub width: usize,
    pub init_kind: InitKind,
    pub init_scale: f64,
    pub step_size: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub log_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub index: usize,
    pub label: String,
    /// Value of the swept axis.
    pub value: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub experiment: String,
    pub arm_index: usize,
    pub arm: String,
    pub trial: usize,
    #[serde(flatten)]
    pub spec: TrialSpec,
    pub init_shrinks: u32,
    /// Spectral norm of the composed policy training starts from.
    pub init_norm: f64,
    pub diverged: bool,
    pub halvings: u32,
    pub step_size_used: f64,
    pub steps: usize,
    pub converged: bool,
    pub train_cost: Option<f64>,
    pub test_cost: Option<f64>,
    pub gap: Option<f64>,
    pub test_all_stable: Option<bool>,
    pub final_grad_norm: Option<f64>,
    pub spectral: Option<f64>,
    pub frobenius: Option<f64>,
    pub nuclear: Option<f64>,
    pub phi_frobenius: Option<f64>,
    pub phi_l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

pub fn arms(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<Vec<Arm>> {
    let (axis, values): (&str, &[usize]) = match kind {
        ExperimentKind::SweepNoiseDim => ("d_noise", &cfg.family.d_noise),
        ExperimentKind::SweepDepth => ("depth", &cfg.policy.depths),
        ExperimentKind::SweepWidth => ("width", &cfg.policy.widths),
        ExperimentKind::SweepLevels => ("train_levels", &cfg.family.train_levels),
        _ => return Err(Error::InvalidArgument(format!("{} is not a sweep", kind.name()))),
    };
    Ok(values
        .iter()
        .enumerate()
        .map(|(index, &value)| Arm { index, label: format!("{axis}={value}"), value })
        .collect())
}

/// Seed of trial `trial` in arm `arm`.
pub fn trial_seed(master: u64, arm: usize, trial: usize) -> u64 {
    mix_seed(&[master, arm as u64, trial as u64])
}

pub fn trial_spec(cfg: &ExperimentConfig, kind: ExperimentKind, arm: &Arm, trial: usize) -> TrialSpec {
    let p = &cfg.policy;
    let mut spec = TrialSpec {
        seed: trial_seed(cfg.seed, arm.index, trial),
        n: cfg.lqr.n,
        a_scale: cfg.lqr.a_scale,
        d_noise: cfg.family.d_noise[0],
        train_levels: cfg.family.train_levels[0],
        test_levels: cfg.family.test_levels,
        depth: p.depths[0],
        width: p.widths[0],
        init_kind: p.init_kind,
        init_scale: p.init_scale,
        step_size: p.step_size,
        max_steps: p.max_steps,
        grad_tol: p.grad_tol,
        log_every: p.log_every,
    };
    match kind {
        ExperimentKind::SweepNoiseDim => spec.d_noise = arm.value,
        ExperimentKind::SweepDepth => spec.depth = arm.value,
        ExperimentKind::SweepWidth => {
            spec.depth = WIDTH_SWEEP_DEPTH;
            spec.width = arm.value;
        }
        ExperimentKind::SweepLevels => spec.train_levels = arm.value,
        _ => {}
    }
    spec
}

/// Result of training and evaluating one trial, before it is labelled.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub init_shrinks: u32,
    pub init_norm: f64,
    pub diverged: bool,
    pub halvings: u32,
    pub step_size_used: f64,
    pub outcome: Option<TrainOutcome>,
    pub train_cost: Option<f64>,
    pub test_cost: Option<f64>,
    pub test_all_stable: Option<bool>,
}

pub fn run_trial(spec: &TrialSpec) -> Result<TrialResult> {
    let rng = SeededRng::new(spec.seed);
    let base = scaled_orthogonal_problem(&mut rng.child(LQR_STREAM), spec.n, spec.a_scale)?;
    let family = make_family(&base, spec.d_noise, mix_seed(&[spec.seed, FAMILY_STREAM]))?;
    let train_ids = train_thetas(spec.train_levels);
    let objective = LevelsObjective::new(&family, &train_ids)?;
    let mut cfg = crate::policy::TrainConfig {
        step_size: spec.step_size,
        max_steps: spec.max_steps,
        grad_tol: spec.grad_tol,
        init_scale: spec.init_scale,
        init_kind: spec.init_kind,
        log_every: spec.log_every,
    };
    let shapes = chain_shapes(spec.n, family.obs_dim(), spec.depth, spec.width);
    let (init, init_shrinks) = stabilize_init(init_policy(&shapes, &cfg, &mut rng.child(INIT_STREAM))?, &objective)?;
    let init_norm = compose(&init).spectral();
    let mut halvings = 0;
    let outcome = loop {
        match train(init.clone(), &objective, &cfg) {
            Ok(out) => break Some(out),
            Err(Error::Divergence { .. }) if halvings == 0 => {
                halvings = 1;
                cfg.step_size /= 2.0;
            }
            Err(Error::Divergence { .. }) => break None,
            Err(e) => return Err(e),
        }
    };
    let Some(outcome) = outcome else {
        return Ok(TrialResult {
            init_shrinks,
            init_norm,
            diverged: true,
            halvings,
            step_size_used: cfg.step_size,
            outcome: None,
            train_cost: None,
            test_cost: None,
            test_all_stable: None,
        });
    };
    let k = compose(&outcome.policy);
    let est = generalization_gap(&family, &base, &k, &train_ids, &test_thetas(spec.test_levels))?;
    Ok(TrialResult {
        init_shrinks,
        init_norm,
        diverged: false,
        halvings,
        step_size_used: cfg.step_size,
        outcome: Some(outcome),
        train_cost: Some(est.train_cost),
        test_cost: est.test_cost.is_finite().then_some(est.test_cost),
        test_all_stable: Some(est.all_stable),
    })
}

/// Most halvings of the composed initial policy tried by [`stabilize_init`].
pub const MAX_INIT_SHRINKS: u32 = 64;

/// Halves the composed policy (each layer scaled by `2^(-1/depth)`) until the
/// closed loop `A - B K [W_c; W_theta]` is a contraction in spectral norm on
/// every training level.
pub fn stabilize_init(policy: LayeredPolicy, objective: &LevelsObjective) -> Result<(LayeredPolicy, u32)> {
    let factor = 0.5f64.powf(1.0 / policy.depth() as f64);
    let mut policy = policy;
    for shrinks in 0..=MAX_INIT_SHRINKS {
        if objective.max_closed_loop_norm(&compose(&policy))? <= 1.0 {
            return Ok((policy, shrinks));
        }
        policy = LayeredPolicy::new(policy.layers().iter().map(|l| l.scale(factor)).collect())?;
    }
    Err(Error::Consistency(format!(
        "closed loop still not contractive after {MAX_INIT_SHRINKS} halvings of the initial policy"
    )))
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn run_record(kind: ExperimentKind, arm: &Arm, trial: usize, spec: TrialSpec, timing: bool) -> Result<SweepRecord> {
    let start = Instant::now();
    let res = run_trial(&spec)?;
    let mut rec = SweepRecord {
        experiment: kind.name().to_string(),
        arm_index: arm.index,
        arm: arm.label.clone(),
        trial,
        spec,
        init_shrinks: res.init_shrinks,
        init_norm: res.init_norm,
        diverged: res.diverged,
        halvings: res.halvings,
        step_size_used: res.step_size_used,
        steps: 0,
        converged: false,
        train_cost: res.train_cost,
        test_cost: res.test_cost,
        gap: None,
        test_all_stable: res.test_all_stable,
        final_grad_norm: None,
        spectral: None,
        frobenius: None,
        nuclear: None,
        phi_frobenius: None,
        phi_l1: None,
        wall_time_s: None,
    };
    if let Some(out) = &res.outcome {
        let k = compose(&out.policy);
        let norms = norms(&k);
        let stack = WeightStack::from_policy(&out.policy, None)?;
        rec.steps = out.steps;
        rec.converged = out.converged;
        rec.final_grad_norm = finite(out.final_grad_norm);
        rec.spectral = Some(norms.spectral);
        rec.frobenius = Some(norms.frobenius);
        rec.nuclear = Some(norms.nuclear);
        rec.phi_frobenius = phi_frobenius_count(&stack).ok().and_then(finite);
        rec.phi_l1 = phi_l1_count(&stack).ok().and_then(finite);
        if let (Some(tr), Some(te)) = (rec.train_cost, rec.test_cost) {
            rec.gap = Some(te - tr);
        }
    }
    if timing {
        rec.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    Ok(rec)
}

/// Runs every `(arm, trial)` pair on the current rayon pool; output is
/// ordered by arm, then trial.
pub fn run_sweep(cfg: &ExperimentConfig, kind: ExperimentKind, timing: bool) -> Result<Vec<SweepRecord>> {
    cfg.validate(kind)?;
    let arms = arms(cfg, kind)?;
    let jobs: Vec<(&Arm, usize)> = arms.iter().flat_map(|a| (0..cfg.trials).map(move |t| (a, t))).collect();
    jobs.par_iter()
        .map(|&(arm, t)| run_record(kind, arm, t, trial_spec(cfg, kind, arm, t), timing))
        .collect()
}

pub fn run_sweep_noise_dim(cfg: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    run_sweep(cfg, ExperimentKind::SweepNoiseDim, false)
}

pub fn run_sweep_depth(cfg: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    run_sweep(cfg, ExperimentKind::SweepDepth, false)
}

pub fn run_sweep_width(cfg: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    run_sweep(cfg, ExperimentKind::SweepWidth, false)
}

pub fn run_sweep_levels(cfg: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    run_sweep(cfg, ExperimentKind::SweepLevels, false)
}

/// Reruns the trial described by a record and returns the fresh record.
pub fn rerun_record(rec: &SweepRecord) -> Result<SweepRecord> {
    let kind = match rec.experiment.as_str() {
        "sweep_noise_dim" => ExperimentKind::SweepNoiseDim,
        "sweep_depth" => ExperimentKind::SweepDepth,
        "sweep_width" => ExperimentKind::SweepWidth,
        "sweep_levels" => ExperimentKind::SweepLevels,
        other => return Err(Error::InvalidArgument(format!("unknown experiment `{other}`"))),
    };
    let arm = Arm { index: rec.arm_index, label: rec.arm.clone(), value: 0 };
    run_record(kind, &arm, rec.trial, rec.spec.clone(), false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm_index: usize,
    pub arm: String,
    pub trials: usize,
    pub diverged: usize,
    /// Trials with a finite gap; the statistics below are over these.
    pub finite: usize,
    pub mean_gap: Option<f64>,
    pub std_gap: Option<f64>,
    pub mean_train_cost: Option<f64>,
    pub mean_test_cost: Option<f64>,
    pub mean_spectral: Option<f64>,
    pub mean_frobenius: Option<f64>,
    pub mean_nuclear: Option<f64>,
    pub mean_phi_frobenius: Option<f64>,
    pub mean_phi_l1: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Sample standard deviation.
fn std_dev(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    (v.len() > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Per-arm statistics over records with a finite gap, in arm order.
pub fn summarize(records: &[SweepRecord]) -> Vec<ArmSummary> {
    let mut out: Vec<ArmSummary> = Vec::new();
    let mut idx: Vec<usize> = records.iter().map(|r| r.arm_index).collect();
    idx.sort_unstable();
    idx.dedup();
    for a in idx {
        let in_arm: Vec<&SweepRecord> = records.iter().filter(|r| r.arm_index == a).collect();
        let ok: Vec<&SweepRecord> = in_arm.iter().copied().filter(|r| r.gap.is_some()).collect();
        let col = |f: fn(&SweepRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        let gaps = col(|r| r.gap);
        out.push(ArmSummary {
            arm_index: a,
            arm: in_arm[0].arm.clone(),
            trials: in_arm.len(),
            diverged: in_arm.iter().filter(|r| r.diverged).count(),
            finite: ok.len(),
            mean_gap: mean(&gaps),
            std_gap: std_dev(&gaps),
            mean_train_cost: mean(&col(|r| r.train_cost)),
            mean_test_cost: mean(&col(|r| r.test_cost)),
            mean_spectral: mean(&col(|r| r.spectral)),
            mean_frobenius: mean(&col(|r| r.frobenius)),
            mean_nuclear: mean(&col(|r| r.nuclear)),
            mean_phi_frobenius: mean(&col(|r| r.phi_frobenius)),
            mean_phi_l1: mean(&col(|r| r.phi_l1)),
        });
    }
    out
}

/// Least-squares slope of `log y` against `log x` over points with `x, y > 0`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Slope of mean gap against the swept value.
pub fn gap_slope(cfg: &ExperimentConfig, kind: ExperimentKind, summaries: &[ArmSummary]) -> Result<Option<f64>> {
    let arms = arms(cfg, kind)?;
    let pts: Vec<(f64, f64)> = summaries
        .iter()
        .filter_map(|s| Some((arms.get(s.arm_index)?.value as f64, s.mean_gap?)))
        .collect();
    Ok(log_log_slope(&pts))
}
