//! Norm-based complexity measures over weight stacks and normalized margin
//! distributions over logged decisions.
//!
//! A stack `W_1 ... W_d` composes left to right like a layered policy, so the
//! network output for an input `x` is `W_1 W_2 ... W_d x`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::mat::Mat;
use crate::policy::LayeredPolicy;

/// Which matrix norm stands in for `||W||_1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Kind {
    /// Sum of absolute entries.
    #[default]
    Entrywise,
    /// Maximum absolute column sum.
    Induced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStack {
    layers: Vec<Mat>,
    init: Option<Vec<Mat>>,
    l1: L1Kind,
}

impl WeightStack {
    pub fn new(layers: Vec<Mat>, init: Option<Vec<Mat>>) -> Result<Self> {
        if layers.is_empty() {
            return dim_err("weight stack needs at least one layer");
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].cols() != w[1].rows() {
                return dim_err(format!("layers {i} and {} do not compose", i + 1));
            }
        }
        if let Some(init) = &init {
            if init.len() != layers.len() {
                return dim_err(format!(
                    "init snapshot has {} layers, stack has {}",
                    init.len(),
                    layers.len()
                ));
            }
            for (i, (w, w0)) in layers.iter().zip(init).enumerate() {
                if w.shape() != w0.shape() {
                    return dim_err(format!("init layer {i} shape {:?} != {:?}", w0.shape(), w.shape()));
                }
            }
        }
        Ok(WeightStack { layers, init, l1: L1Kind::Entrywise })
    }

    pub fn from_policy(policy: &LayeredPolicy, init: Option<&LayeredPolicy>) -> Result<Self> {
        WeightStack::new(policy.layers().to_vec(), init.map(|p| p.layers().to_vec()))
    }

    pub fn with_l1_kind(mut self, l1: L1Kind) -> Self {
        self.l1 = l1;
        self
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    pub fn init(&self) -> Option<&[Mat]> {
        self.init.as_deref()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn compose(&self) -> Mat {
        let mut it = self.layers.iter();
        let first = it.next().expect("non-empty").clone();
        it.fold(first, |acc, l| &acc * l)
    }

    /// Network output for one input vector.
    pub fn logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = Mat::from_row_slice(state.len(), 1, state)?;
        Ok(self.compose().matmul(&x)?.to_row_major())
    }

    pub fn l1_kind(&self) -> L1Kind {
        self.l1
    }

    fn l1_norm(&self, m: &Mat) -> f64 {
        match self.l1 {
            L1Kind::Entrywise => m.entrywise_l1(),
            L1Kind::Induced => m.induced_l1(),
        }
    }

    fn nonzero_spectral(&self) -> Result<Vec<f64>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let s = w.spectral();
                if s > 0.0 {
                    Ok(s)
                } else {
                    Err(Error::InvalidArgument(format!("layer {i} is zero; norm ratio undefined")))
                }
            })
            .collect()
    }

    fn require_init(&self) -> Result<&[Mat]> {
        self.init
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("measure needs an initialization snapshot".into()))
    }
}

/// `sum_i ||K_i||_F^2 / ||K_i||^2`.
pub fn phi_frobenius_count(stack: &WeightStack) -> Result<f64> {
    let spec = stack.nonzero_spectral()?;
    Ok(stack
        .layers
        .iter()
        .zip(&spec)
        .map(|(w, s)| (w.frobenius() / s).powi(2))
        .sum())
}

/// `(sum_i (||K_i||_1 / ||K_i||)^(2/3))^3`.
pub fn phi_l1_count(stack: &WeightStack) -> Result<f64> {
    let spec = stack.nonzero_spectral()?;
    let inner: f64 = stack
        .layers
        .iter()
        .zip(&spec)
        .map(|(w, s)| (stack.l1_norm(w) / s).powf(2.0 / 3.0))
        .sum();
    Ok(inner.powi(3))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormProducts {
    pub spectral: f64,
    pub frobenius: f64,
    pub nuclear: f64,
    pub l1: f64,
}

pub fn norm_products(stack: &WeightStack) -> Result<NormProducts> {
    let mut out = NormProducts { spectral: 1.0, frobenius: 1.0, nuclear: 1.0, l1: 1.0 };
    for w in &stack.layers {
        let sv = w.singular_values();
        out.spectral *= sv.first().copied().unwrap_or(0.0);
        out.nuclear *= sv.iter().sum::<f64>();
        out.frobenius *= w.frobenius();
        out.l1 *= stack.l1_norm(w);
    }
    let composed = stack.compose().spectral();
    if composed > out.spectral * (1.0 + 1e-10) + 1e-300 {
        return Err(Error::Consistency(format!(
            "spectral product {} below composed norm {composed}",
            out.spectral
        )));
    }
    Ok(out)
}

/// `(prod ||W_i||) (sum ||W_i||_1^(2/3) / ||W_i||^(2/3))^(3/2)`.
pub fn r_spectral_l1(stack: &WeightStack) -> Result<f64> {
    let spec = stack.nonzero_spectral()?;
    let prod: f64 = spec.iter().product();
    let sum: f64 = stack
        .layers
        .iter()
        .zip(&spec)
        .map(|(w, s)| (stack.l1_norm(w) / s).powf(2.0 / 3.0))
        .sum();
    Ok(prod * sum.powf(1.5))
}

/// `sqrt(sum ||W_i - W_i^0||_F^2)`.
pub fn r_distance(stack: &WeightStack) -> Result<f64> {
    let init = stack.require_init()?;
    Ok(stack
        .layers
        .iter()
        .zip(init)
        .map(|(w, w0)| (w - w0).frobenius().powi(2))
        .sum::<f64>()
        .sqrt())
}

/// `sqrt(ln(d) prod ||W_i||^2 sum ||W_j - W_j^0||_F^2 / ||W_j||^2)`.
pub fn r_spectral_fro(stack: &WeightStack) -> Result<f64> {
    let init = stack.require_init()?;
    let spec = stack.nonzero_spectral()?;
    let prod_sq: f64 = spec.iter().map(|s| s * s).product();
    let sum: f64 = stack
        .layers
        .iter()
        .zip(init)
        .zip(&spec)
        .map(|((w, w0), s)| (w - w0).frobenius().powi(2) / (s * s))
        .sum();
    Ok(((stack.depth() as f64).ln() * prod_sq * sum).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    SpectralL1,
    Distance,
    SpectralFro,
    /// Denominator fixed to 1: margins are raw logit gaps.
    Identity,
}

impl MeasureKind {
    pub const NORMALIZING: [MeasureKind; 3] = [MeasureKind::SpectralL1, MeasureKind::Distance, MeasureKind::SpectralFro];

    pub fn evaluate(self, stack: &WeightStack) -> Result<f64> {
        match self {
            MeasureKind::SpectralL1 => r_spectral_l1(stack),
            MeasureKind::Distance => r_distance(stack),
            MeasureKind::SpectralFro => r_spectral_fro(stack),
            MeasureKind::Identity => Ok(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRecord {
    pub state: Vec<f64>,
    pub logits: Vec<f64>,
    pub action: usize,
}

impl DecisionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.logits.len() < 2 {
            return Err(Error::InvalidArgument("margin undefined with fewer than two actions".into()));
        }
        if self.action >= self.logits.len() {
            return Err(Error::InvalidArgument(format!(
                "action {} out of range for {} logits",
                self.action,
                self.logits.len()
            )));
        }
        if self.logits.iter().chain(&self.state).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("record contains non-finite values".into()));
        }
        Ok(())
    }

    /// Taken-action logit minus the best competing logit.
    pub fn raw_margin(&self) -> f64 {
        let best_other = self
            .logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.action)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        self.logits[self.action] - best_other
    }
}

/// Records whose logits come from evaluating `stack` on each state.
pub fn records_from_stack(stack: &WeightStack, states: &[Vec<f64>], actions: &[usize]) -> Result<Vec<DecisionRecord>> {
    if states.len() != actions.len() {
        return dim_err("states and actions must have equal length");
    }
    states
        .iter()
        .zip(actions)
        .map(|(s, &a)| {
            Ok(DecisionRecord { state: s.clone(), logits: stack.logits(s)?, action: a })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |f: f64| {
            let pos = f * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Summary {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub measure: MeasureKind,
    pub margins: Vec<f64>,
    pub summary: Summary,
    /// `R * ||S||_2 / n`, or 1 for identity normalization.
    pub denominator: f64,
    pub measure_value: f64,
    pub state_spectral_norm: f64,
    /// `n` in the denominator: the number of records.
    pub record_count: usize,
}

/// Normalized margins `(F(x)_y - max_{i != y} F(x)_i) / (R ||S||_2 / n)`.
pub fn margin_distribution(records: &[DecisionRecord], stack: Option<&WeightStack>, kind: MeasureKind) -> Result<MarginReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("margin distribution needs at least one record".into()));
    }
    for r in records {
        r.validate()?;
    }
    let dim = records[0].state.len();
    if dim == 0 || records.iter().any(|r| r.state.len() != dim) {
        return dim_err("all records need non-empty states of equal length");
    }
    let n = records.len();
    let states: Vec<f64> = records.iter().flat_map(|r| r.state.iter().copied()).collect();
    let state_spectral_norm = Mat::from_row_slice(n, dim, &states)?.spectral();
    let (measure_value, denominator) = match kind {
        MeasureKind::Identity => (1.0, 1.0),
        _ => {
            let stack = stack.ok_or_else(|| Error::InvalidArgument("measure needs a weight stack".into()))?;
            let r = kind.evaluate(stack)?;
            (r, r * state_spectral_norm / n as f64)
        }
    };
    if !(denominator > 0.0) || !denominator.is_finite() {
        return Err(Error::InvalidArgument(format!("margin denominator is {denominator}")));
    }
    let margins: Vec<f64> = records.iter().map(|r| r.raw_margin() / denominator).collect();
    let summary = Summary::of(&margins).expect("non-empty");
    Ok(MarginReport {
        measure: kind,
        margins,
        summary,
        denominator,
        measure_value,
        state_spectral_norm,
        record_count: n,
    })
}
