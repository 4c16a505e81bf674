//! Overparametrized linear policies `K = K_0 K_1 ... K_j` and a full-batch
//! gradient-descent trainer with simultaneous layer updates.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::mat::{sample_gaussian, sample_semi_orthogonal, Mat, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Orthogonal,
    Gaussian,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub step_size: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub init_scale: f64,
    pub init_kind: InitKind,
    /// Trace is recorded every `log_every` steps (plus the first and last).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_size: 1e-3,
            max_steps: 50_000,
            grad_tol: 1e-8,
            init_scale: 0.5,
            init_kind: InitKind::Orthogonal,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be non-negative".into()));
        }
        if !self.init_scale.is_finite() {
            return Err(Error::InvalidArgument("init_scale must be finite".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayeredPolicy {
    layers: Vec<Mat>,
}

impl LayeredPolicy {
    pub fn new(layers: Vec<Mat>) -> Result<Self> {
        check_composes(layers.iter().map(|l| l.shape()))?;
        Ok(LayeredPolicy { layers })
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Mat> {
        self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Shape of the end-to-end product.
    pub fn shape(&self) -> (usize, usize) {
        (self.layers[0].rows(), self.layers[self.layers.len() - 1].cols())
    }
}

fn check_composes(shapes: impl IntoIterator<Item = (usize, usize)>) -> Result<()> {
    let shapes: Vec<_> = shapes.into_iter().collect();
    if shapes.is_empty() {
        return dim_err("a policy needs at least one layer");
    }
    for (i, w) in shapes.windows(2).enumerate() {
        if w[0].1 != w[1].0 {
            return dim_err(format!(
                "layer {i} is {}x{} but layer {} is {}x{}",
                w[0].0,
                w[0].1,
                i + 1,
                w[1].0,
                w[1].1
            ));
        }
    }
    if shapes.iter().any(|&(r, c)| r == 0 || c == 0) {
        return dim_err("layers must be non-empty");
    }
    Ok(())
}

/// Shapes for `depth` layers mapping `obs_dim` to `out_dim` through square
/// hidden layers of size `width`. Depth 1 is a single `out_dim x obs_dim` layer.
pub fn chain_shapes(out_dim: usize, obs_dim: usize, depth: usize, width: usize) -> Vec<(usize, usize)> {
    match depth {
        0 => Vec::new(),
        1 => vec![(out_dim, obs_dim)],
        _ => {
            let mut s = vec![(out_dim, width)];
            s.extend(std::iter::repeat((width, width)).take(depth - 2));
            s.push((width, obs_dim));
            s
        }
    }
}

pub fn init_policy(shapes: &[(usize, usize)], cfg: &TrainConfig, rng: &mut SeededRng) -> Result<LayeredPolicy> {
    check_composes(shapes.iter().copied())?;
    let layers = shapes
        .iter()
        .map(|&(r, c)| match cfg.init_kind {
            InitKind::Zero => Ok(Mat::zeros(r, c)),
            InitKind::Gaussian => sample_gaussian(rng, r, c, cfg.init_scale.abs()),
            InitKind::Orthogonal if r >= c => sample_semi_orthogonal(rng, r, c, cfg.init_scale),
            InitKind::Orthogonal => Ok(sample_semi_orthogonal(rng, c, r, cfg.init_scale)?.transpose()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayeredPolicy { layers })
}

pub fn compose(policy: &LayeredPolicy) -> Mat {
    let mut it = policy.layers.iter();
    let first = it.next().expect("policy has at least one layer").clone();
    it.fold(first, |acc, l| &acc * l)
}

/// `dC/dK_i = (K_0..K_{i-1})^T G (K_{i+1}..K_j)^T`.
pub fn layer_gradients(policy: &LayeredPolicy, end_to_end_grad: &Mat) -> Result<Vec<Mat>> {
    if end_to_end_grad.shape() != policy.shape() {
        return dim_err(format!(
            "gradient shape {:?} does not match policy shape {:?}",
            end_to_end_grad.shape(),
            policy.shape()
        ));
    }
    let layers = &policy.layers;
    let d = layers.len();
    // suffix[i] = K_{i+1} ... K_{d-1}
    let mut suffix: Vec<Option<Mat>> = vec![None; d];
    for i in (0..d.saturating_sub(1)).rev() {
        suffix[i] = Some(match &suffix[i + 1] {
            Some(s) => &layers[i + 1] * s,
            None => layers[i + 1].clone(),
        });
    }
    let mut grads = Vec::with_capacity(d);
    let mut prefix: Option<Mat> = None;
    for i in 0..d {
        let left = match &prefix {
            Some(p) => &p.transpose() * end_to_end_grad,
            None => end_to_end_grad.clone(),
        };
        grads.push(match &suffix[i] {
            Some(s) => &left * &s.transpose(),
            None => left,
        });
        prefix = Some(match prefix {
            Some(p) => &p * &layers[i],
            None => layers[i].clone(),
        });
    }
    Ok(grads)
}

/// Differentiable scalar objective over an end-to-end policy matrix.
pub trait Objective {
    fn shape(&self) -> (usize, usize);

    /// Cost and gradient; a non-finite cost may return `None` for the gradient.
    fn cost_and_gradient(&self, k: &Mat) -> Result<(f64, Option<Mat>)>;

    fn cost(&self, k: &Mat) -> Result<f64> {
        self.cost_and_gradient(k).map(|(c, _)| c)
    }
}

/// `0.5 ||K - target||_F^2`.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    pub target: Mat,
}

impl Objective for QuadraticObjective {
    fn shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    fn cost_and_gradient(&self, k: &Mat) -> Result<(f64, Option<Mat>)> {
        if k.shape() != self.target.shape() {
            return dim_err("quadratic objective shape mismatch");
        }
        let diff = k - &self.target;
        Ok((0.5 * diff.frobenius().powi(2), Some(diff)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub train_cost: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: LayeredPolicy,
    pub trace: Vec<TraceEntry>,
    /// Number of updates applied.
    pub steps: usize,
    pub converged: bool,
    pub final_cost: f64,
    pub final_grad_norm: f64,
}

pub fn train(policy: LayeredPolicy, objective: &dyn Objective, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if policy.shape() != objective.shape() {
        return dim_err(format!(
            "policy shape {:?} does not match objective shape {:?}",
            policy.shape(),
            objective.shape()
        ));
    }
    let mut policy = policy;
    let mut trace = Vec::new();
    let mut step = 0;
    loop {
        let k = compose(&policy);
        let (cost, grad) = objective.cost_and_gradient(&k)?;
        let grad = match grad {
            Some(g) if cost.is_finite() && g.is_finite() => g,
            _ => {
                trace.push(TraceEntry { step, train_cost: cost, grad_norm: f64::NAN });
                return Err(Error::Divergence { step, trace });
            }
        };
        let grads = layer_gradients(&policy, &grad)?;
        let grad_norm = grads.iter().map(|g| g.frobenius().powi(2)).sum::<f64>().sqrt();
        let converged = grad_norm < cfg.grad_tol;
        let done = converged || step >= cfg.max_steps;
        if step % cfg.log_every == 0 || done {
            trace.push(TraceEntry { step, train_cost: cost, grad_norm });
        }
        if done {
            return Ok(TrainOutcome {
                policy,
                trace,
                steps: step,
                converged,
                final_cost: cost,
                final_grad_norm: grad_norm,
            });
        }
        let layers = policy
            .layers
            .iter()
            .zip(&grads)
            .map(|(l, g)| l - &g.scale(cfg.step_size))
            .collect::<Vec<_>>();
        if layers.iter().any(|l| !l.is_finite()) {
            trace.push(TraceEntry { step: step + 1, train_cost: f64::NAN, grad_norm: f64::NAN });
            return Err(Error::Divergence { step: step + 1, trace });
        }
        policy = LayeredPolicy { layers };
        step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: InitKind, scale: f64) -> TrainConfig {
        TrainConfig { init_kind: kind, init_scale: scale, ..TrainConfig::default() }
    }

    #[test]
    fn orthogonal_wide_layer_has_equal_singular_values() {
        let p = init_policy(&[(10, 110)], &cfg(InitKind::Orthogonal, 0.5), &mut SeededRng::new(1)).unwrap();
        for s in p.layers()[0].singular_values() {
            assert!((s - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_init_composes_to_zero() {
        let p = init_policy(&[(3, 4), (4, 5)], &cfg(InitKind::Zero, 1.0), &mut SeededRng::new(1)).unwrap();
        assert_eq!(compose(&p), Mat::zeros(3, 5));
    }

    #[test]
    fn product_shape_and_bad_shapes() {
        let p = init_policy(&chain_shapes(10, 110, 2, 100), &cfg(InitKind::Gaussian, 0.1), &mut SeededRng::new(1))
            .unwrap();
        assert_eq!(compose(&p).shape(), (10, 110));
        assert!(init_policy(&[(2, 3), (4, 5)], &TrainConfig::default(), &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn chain_shape_layout() {
        assert_eq!(chain_shapes(10, 110, 1, 100), vec![(10, 110)]);
        assert_eq!(chain_shapes(10, 110, 4, 100), vec![(10, 100), (100, 100), (100, 100), (100, 110)]);
    }

    #[test]
    fn compose_identity_and_single_layer() {
        let id = LayeredPolicy::new(vec![Mat::identity(3); 4]).unwrap();
        assert_eq!(compose(&id), Mat::identity(3));
        let m = sample_gaussian(&mut SeededRng::new(2), 2, 5, 1.0).unwrap();
        assert_eq!(compose(&LayeredPolicy::new(vec![m.clone()]).unwrap()), m);
    }

    #[test]
    fn compose_is_submultiplicative() {
        let mut rng = SeededRng::new(3);
        let a = sample_gaussian(&mut rng, 4, 6, 1.0).unwrap();
        let b = sample_gaussian(&mut rng, 6, 3, 1.0).unwrap();
        let k = compose(&LayeredPolicy::new(vec![a.clone(), b.clone()]).unwrap());
        assert!(k.spectral() <= a.spectral() * b.spectral() * (1.0 + 1e-12));
    }

    #[test]
    fn single_layer_gradient_is_end_to_end() {
        let m = sample_gaussian(&mut SeededRng::new(2), 2, 5, 1.0).unwrap();
        let g = sample_gaussian(&mut SeededRng::new(3), 2, 5, 1.0).unwrap();
        let grads = layer_gradients(&LayeredPolicy::new(vec![m]).unwrap(), &g).unwrap();
        assert_eq!(grads, vec![g]);
    }

    #[test]
    fn zero_gradient_propagates() {
        let p = init_policy(&[(2, 3), (3, 3), (3, 4)], &cfg(InitKind::Gaussian, 1.0), &mut SeededRng::new(4)).unwrap();
        for g in layer_gradients(&p, &Mat::zeros(2, 4)).unwrap() {
            assert_eq!(g.frobenius(), 0.0);
        }
        assert!(layer_gradients(&p, &Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn quadratic_descent_converges() {
        let target = sample_gaussian(&mut SeededRng::new(5), 3, 4, 1.0).unwrap();
        let obj = QuadraticObjective { target: target.clone() };
        let p = init_policy(&[(3, 4)], &cfg(InitKind::Zero, 0.0), &mut SeededRng::new(1)).unwrap();
        let c = TrainConfig { step_size: 0.1, max_steps: 10_000, grad_tol: 1e-10, ..cfg(InitKind::Zero, 0.0) };
        let out = train(p, &obj, &c).unwrap();
        assert!(out.converged);
        assert!(compose(&out.policy).max_abs_diff(&target) < 1e-8);
        assert_eq!(out.trace.first().unwrap().step, 0);
        assert_eq!(out.trace.last().unwrap().step, out.steps);
    }

    #[test]
    fn oversized_step_diverges() {
        let target = Mat::identity(3);
        let obj = QuadraticObjective { target };
        let p = init_policy(&[(3, 3)], &cfg(InitKind::Zero, 0.0), &mut SeededRng::new(1)).unwrap();
        let c = TrainConfig { step_size: 3.0, max_steps: 100_000, ..cfg(InitKind::Zero, 0.0) };
        match train(p, &obj, &c) {
            Err(Error::Divergence { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig { step_size: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { max_steps: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let target = sample_gaussian(&mut SeededRng::new(5), 3, 4, 1.0).unwrap();
        let obj = QuadraticObjective { target };
        let c = TrainConfig { step_size: 0.05, max_steps: 200, log_every: 10, ..TrainConfig::default() };
        let run = || {
            let p = init_policy(&[(3, 5), (5, 4)], &c, &mut SeededRng::new(9)).unwrap();
            train(p, &obj, &c).unwrap().trace
        };
        assert_eq!(run(), run());
    }
}
