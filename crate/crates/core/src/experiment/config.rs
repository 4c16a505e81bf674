use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{L1Kind, MeasureKind};
use crate::one_step::TheoremParams;
use crate::policy::{InitKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SweepNoiseDim,
    SweepDepth,
    SweepWidth,
    SweepLevels,
    VerifyTheorem,
    MeasuresReport,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SweepNoiseDim => "sweep_noise_dim",
            ExperimentKind::SweepDepth => "sweep_depth",
            ExperimentKind::SweepWidth => "sweep_width",
            ExperimentKind::SweepLevels => "sweep_levels",
            ExperimentKind::VerifyTheorem => "verify_theorem",
            ExperimentKind::MeasuresReport => "measures_report",
        }
    }

    pub fn is_sweep(self) -> bool {
        !matches!(self, ExperimentKind::VerifyTheorem | ExperimentKind::MeasuresReport)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqrSettings {
    pub n: usize,
    pub a_scale: f64,
}

impl Default for LqrSettings {
    fn default() -> Self {
        LqrSettings { n: 10, a_scale: 0.99 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySettings {
    pub d_noise: Vec<usize>,
    /// Number of training levels; a list so that level-count sweeps have arms.
    pub train_levels: Vec<usize>,
    pub test_levels: usize,
}

impl Default for FamilySettings {
    fn default() -> Self {
        FamilySettings { d_noise: vec![50, 100, 200, 400], train_levels: vec![1], test_levels: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySettings {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub init_kind: InitKind,
    pub init_scale: f64,
    pub step_size: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub log_every: usize,
}

impl Default for PolicySettings {
    fn default() -> Self {
        PolicySettings {
            depths: vec![1],
            widths: vec![100],
            init_kind: InitKind::Orthogonal,
            init_scale: DEFAULT_INIT_SCALE,
            step_size: DEFAULT_STEP_SIZE,
            max_steps: DEFAULT_MAX_STEPS,
            grad_tol: 1e-8,
            log_every: 500,
        }
    }
}

pub const DEFAULT_INIT_SCALE: f64 = 0.5;
pub const DEFAULT_STEP_SIZE: f64 = 5e-5;
pub const DEFAULT_MAX_STEPS: usize = 3000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremSettings {
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub m: Vec<usize>,
    pub psi: Vec<f64>,
    pub trials: usize,
}

impl Default for TheoremSettings {
    fn default() -> Self {
        TheoremSettings { n: vec![5], p: vec![50], m: vec![1, 2, 5, 10], psi: vec![0.0, 1.0], trials: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuresSettings {
    pub stack: PathBuf,
    #[serde(default)]
    pub records: Option<PathBuf>,
    #[serde(default = "default_normalizations")]
    pub normalizations: Vec<MeasureKind>,
    #[serde(default)]
    pub l1: L1Kind,
}

fn default_normalizations() -> Vec<MeasureKind> {
    MeasureKind::NORMALIZING.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub lqr: LqrSettings,
    #[serde(default)]
    pub family: FamilySettings,
    #[serde(default)]
    pub policy: PolicySettings,
    #[serde(default)]
    pub theorem: TheoremSettings,
    #[serde(default)]
    pub measures: Option<MeasuresSettings>,
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    10
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: None,
            seed: default_seed(),
            trials: default_trials(),
            out: None,
            lqr: LqrSettings::default(),
            family: FamilySettings::default(),
            policy: PolicySettings::default(),
            theorem: TheoremSettings::default(),
            measures: None,
        }
    }
}

fn bad(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn nonempty<T>(field: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(bad(field, "list must not be empty"));
    }
    Ok(())
}

fn positive_counts(field: &str, v: &[usize]) -> Result<()> {
    nonempty(field, v)?;
    if let Some(i) = v.iter().position(|&x| x == 0) {
        return Err(bad(&format!("{field}[{i}]"), "must be positive"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Checks every field that the given experiment reads.
    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(bad("kind", format!("config is for {} but {} was requested", k.name(), kind.name())));
            }
        }
        if self.seed == 0 {
            return Err(bad("seed", "must be positive"));
        }
        if self.trials == 0 {
            return Err(bad("trials", "must be positive"));
        }
        match kind {
            ExperimentKind::VerifyTheorem => self.validate_theorem(),
            ExperimentKind::MeasuresReport => match &self.measures {
                None => Err(bad("measures", "section is required for measures_report")),
                Some(m) => nonempty("measures.normalizations", &m.normalizations),
            },
            _ => self.validate_sweep(),
        }
    }

    fn validate_sweep(&self) -> Result<()> {
        let n = self.lqr.n;
        if n == 0 {
            return Err(bad("lqr.n", "must be positive"));
        }
        if !(self.lqr.a_scale.is_finite() && self.lqr.a_scale >= 0.0) {
            return Err(bad("lqr.a_scale", "must be finite and non-negative"));
        }
        positive_counts("family.d_noise", &self.family.d_noise)?;
        if let Some(i) = self.family.d_noise.iter().position(|&d| d < n) {
            return Err(bad(
                &format!("family.d_noise[{i}]"),
                format!("{} is smaller than lqr.n = {n}", self.family.d_noise[i]),
            ));
        }
        positive_counts("family.train_levels", &self.family.train_levels)?;
        if self.family.test_levels == 0 {
            return Err(bad("family.test_levels", "must be positive"));
        }
        positive_counts("policy.depths", &self.policy.depths)?;
        positive_counts("policy.widths", &self.policy.widths)?;
        self.train_config(self.policy.step_size)
            .validate()
            .map_err(|e| bad("policy", e))?;
        if !(self.policy.init_scale.is_finite() && self.policy.init_scale >= 0.0) {
            return Err(bad("policy.init_scale", "must be finite and non-negative"));
        }
        Ok(())
    }

    fn validate_theorem(&self) -> Result<()> {
        let t = &self.theorem;
        positive_counts("theorem.n", &t.n)?;
        positive_counts("theorem.p", &t.p)?;
        positive_counts("theorem.m", &t.m)?;
        nonempty("theorem.psi", &t.psi)?;
        if t.trials < 2 {
            return Err(bad("theorem.trials", "must be at least 2"));
        }
        for &n in &t.n {
            for &p in &t.p {
                if p < n {
                    return Err(bad("theorem.p", format!("{p} is smaller than theorem.n = {n}")));
                }
            }
        }
        if let Some(i) = t.psi.iter().position(|x| !x.is_finite()) {
            return Err(bad(&format!("theorem.psi[{i}]"), "must be finite"));
        }
        for &n in &t.n {
            for &p in &t.p {
                for &m in &t.m {
                    for &psi in &t.psi {
                        TheoremParams { n, p, m, psi }.validate().map_err(|e| bad("theorem", e))?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn train_config(&self, step_size: f64) -> TrainConfig {
        TrainConfig {
            step_size,
            max_steps: self.policy.max_steps,
            grad_tol: self.policy.grad_tol,
            init_scale: self.policy.init_scale,
            init_kind: self.policy.init_kind,
            log_every: self.policy.log_every,
        }
    }

    /// Makes relative measure-file paths relative to `dir`.
    pub fn resolve_paths(&mut self, dir: &Path) {
        if let Some(m) = &mut self.measures {
            if m.stack.is_relative() {
                m.stack = dir.join(&m.stack);
            }
            if let Some(r) = &mut m.records {
                if r.is_relative() {
                    *r = dir.join(&*r);
                }
            }
        }
    }
}

/// Reads, parses and validates a config file for `kind`.
pub fn load_config(path: &Path, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate(kind)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::parse("seed = 3\n[family]\nd_noise = [20]\n").unwrap();
        cfg.validate(ExperimentKind::SweepNoiseDim).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.lqr, LqrSettings::default());
        assert_eq!(cfg.family.train_levels, vec![1]);
        assert_eq!(cfg.policy.depths, vec![1]);
    }

    #[test]
    fn noise_dimension_below_state_dimension_names_field() {
        let cfg = ExperimentConfig::parse("[family]\nd_noise = [50, 5]\n").unwrap();
        let err = cfg.validate(ExperimentKind::SweepNoiseDim).unwrap_err().to_string();
        assert!(err.contains("family.d_noise[1]"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::parse("[policy]\nlerning_rate = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("lerning_rate"), "{err}");
        assert!(ExperimentConfig::parse("lerning_rate = 0.1\n").is_err());
    }

    #[test]
    fn kind_must_match_request() {
        let cfg = ExperimentConfig::parse("kind = \"sweep_depth\"\n").unwrap();
        assert!(cfg.validate(ExperimentKind::SweepDepth).is_ok());
        let err = cfg.validate(ExperimentKind::SweepNoiseDim).unwrap_err();
        assert!(err.to_string().contains("kind"));
    }

    #[test]
    fn empty_lists_and_zero_counts_rejected() {
        for text in ["trials = 0", "seed = 0", "[policy]\ndepths = []", "[policy]\nwidths = [0]", "[policy]\nstep_size = -1.0"] {
            let cfg = ExperimentConfig::parse(text).unwrap();
            assert!(cfg.validate(ExperimentKind::SweepDepth).is_err(), "{text}");
        }
        let cfg = ExperimentConfig::parse("[theorem]\npsi = []").unwrap();
        assert!(cfg.validate(ExperimentKind::VerifyTheorem).is_err());
    }

    #[test]
    fn measures_section_required_and_paths_resolved() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.validate(ExperimentKind::MeasuresReport).is_err());
        let mut cfg = ExperimentConfig::parse("[measures]\nstack = \"w.stack\"\nnormalizations = [\"identity\"]\n").unwrap();
        cfg.resolve_paths(Path::new("/data"));
        let m = cfg.measures.as_ref().unwrap();
        assert_eq!(m.stack, PathBuf::from("/data/w.stack"));
        assert_eq!(m.normalizations, vec![MeasureKind::Identity]);
        cfg.validate(ExperimentKind::MeasuresReport).unwrap();
    }

    #[test]
    fn missing_file_is_config_error() {
        let err = load_config(Path::new("/nonexistent/cfg.toml"), ExperimentKind::SweepDepth).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
