//! Level families built over a base LQR.
//!
//! A level `theta` observes the state through `o = [W_c; W_theta] s`: `W_c`
//! is shared by every level and `W_theta` is a semi-orthogonal projection
//! regenerated from `(family_seed, theta)`. A policy `K` acting on
//! observations is equivalent to the state policy `K [W_c; W_theta]`.

use crate::error::{dim_err, Error, Result};
use crate::lqr::{gradient_from_eval, lqr_cost, LqrEval, LqrProblem};
use crate::mat::{mix_seed, sample_semi_orthogonal, Mat, SeededRng};
use crate::policy::Objective;

const SIGNAL_STREAM: u64 = 0x5349_474e;
const NOISE_STREAM: u64 = 0x4e4f_4953;

/// First held-out level id; train levels use `0..m`.
pub const TEST_THETA_OFFSET: u64 = 1_000_000;

#[derive(Clone, Debug)]
pub struct LevelFamily {
    base: LqrProblem,
    w_c: Mat,
    d_noise: usize,
    family_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub theta: u64,
    pub w_theta: Mat,
    pub stacked: Mat,
}

pub fn make_family(base: &LqrProblem, d_noise: usize, family_seed: u64) -> Result<LevelFamily> {
    let n = base.n();
    if d_noise < n {
        return dim_err(format!(
            "d_noise ({d_noise}) must be at least the state dimension ({n})"
        ));
    }
    let mut rng = SeededRng::new(mix_seed(&[family_seed, SIGNAL_STREAM]));
    let w_c = sample_semi_orthogonal(&mut rng, n, n, 1.0)?;
    Ok(LevelFamily {
        base: base.clone(),
        w_c,
        d_noise,
        family_seed,
    })
}

impl LevelFamily {
    pub fn base(&self) -> &LqrProblem {
        &self.base
    }

    pub fn w_c(&self) -> &Mat {
        &self.w_c
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn d_signal(&self) -> usize {
        self.w_c.rows()
    }

    pub fn d_noise(&self) -> usize {
        self.d_noise
    }

    pub fn obs_dim(&self) -> usize {
        self.d_signal() + self.d_noise
    }

    pub fn family_seed(&self) -> u64 {
        self.family_seed
    }

    pub fn get_level(&self, theta: u64) -> Level {
        let mut rng = SeededRng::new(mix_seed(&[self.family_seed, NOISE_STREAM, theta]));
        let w_theta = sample_semi_orthogonal(&mut rng, self.d_noise, self.n(), 1.0)
            .expect("d_noise >= n checked at construction");
        let stacked = Mat::vstack(&[&self.w_c, &w_theta]).expect("both blocks have n columns");
        Level { theta, w_theta, stacked }
    }

    pub fn levels(&self, thetas: &[u64]) -> Vec<Level> {
        thetas.iter().map(|&t| self.get_level(t)).collect()
    }

    /// Observation policy `[P W_c^T, 0]` that reads only the shared signal block.
    pub fn signal_only_policy(&self, state_policy: &Mat) -> Result<Mat> {
        let n = self.n();
        if state_policy.shape() != (n, n) {
            return dim_err(format!("state policy must be {n}x{n}"));
        }
        let signal = state_policy * &self.w_c.transpose();
        Mat::hstack(&[&signal, &Mat::zeros(n, self.d_noise)])
    }

    /// `[alpha P W_c^T, (1 - alpha) P W_theta^T]`: every member maps to `P` on `level`.
    pub fn alpha_policy(&self, level: &Level, state_policy: &Mat, alpha: f64) -> Result<Mat> {
        let n = self.n();
        if state_policy.shape() != (n, n) {
            return dim_err(format!("state policy must be {n}x{n}"));
        }
        let signal = (state_policy * &self.w_c.transpose()).scale(alpha);
        let noise = (state_policy * &level.w_theta.transpose()).scale(1.0 - alpha);
        Mat::hstack(&[&signal, &noise])
    }
}

pub fn effective_policy(level: &Level, k: &Mat) -> Result<Mat> {
    k.matmul(&level.stacked)
}

pub fn level_cost(level: &Level, base: &LqrProblem, k: &Mat) -> Result<LqrEval> {
    lqr_cost(base, &effective_policy(level, k)?)
}

/// Cost and `dC/dK = grad_P C(K [W_c; W_theta]) [W_c; W_theta]^T`.
pub fn level_cost_and_gradient(level: &Level, base: &LqrProblem, k: &Mat) -> Result<(LqrEval, Mat)> {
    let p = effective_policy(level, k)?;
    let eval = lqr_cost(base, &p)?;
    let gp = gradient_from_eval(base, &p, &eval)?;
    Ok((eval, &gp * &level.stacked.transpose()))
}

pub fn level_gradient(level: &Level, base: &LqrProblem, k: &Mat) -> Result<Mat> {
    level_cost_and_gradient(level, base, k).map(|(_, g)| g)
}

/// Mean infinite-horizon cost over a fixed set of training levels.
#[derive(Clone, Debug)]
pub struct LevelsObjective {
    base: LqrProblem,
    levels: Vec<Level>,
    obs_dim: usize,
}

impl LevelsObjective {
    pub fn new(family: &LevelFamily, thetas: &[u64]) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidArgument("objective needs at least one level".into()));
        }
        Ok(LevelsObjective {
            base: family.base().clone(),
            levels: family.levels(thetas),
            obs_dim: family.obs_dim(),
        })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn base(&self) -> &LqrProblem {
        &self.base
    }

    /// Largest `||A - B K [W_c; W_theta]||_2` over the training levels.
    pub fn max_closed_loop_norm(&self, k: &Mat) -> Result<f64> {
        let mut worst = 0.0f64;
        for level in &self.levels {
            let p = effective_policy(level, k)?;
            worst = worst.max(self.base.closed_loop(&p).spectral());
        }
        Ok(worst)
    }
}

impl Objective for LevelsObjective {
    fn shape(&self) -> (usize, usize) {
        (self.base.n(), self.obs_dim)
    }

    fn cost_and_gradient(&self, k: &Mat) -> Result<(f64, Option<Mat>)> {
        let count = self.levels.len() as f64;
        let mut cost = 0.0;
        let mut grad = Mat::zeros(k.rows(), k.cols());
        for level in &self.levels {
            let p = effective_policy(level, k)?;
            let eval = lqr_cost(&self.base, &p)?;
            if !eval.stable {
                return Ok((f64::INFINITY, None));
            }
            cost += eval.cost;
            let gp = gradient_from_eval(&self.base, &p, &eval)?;
            grad = &grad + &(&gp * &level.stacked.transpose());
        }
        Ok((cost / count, Some(grad.scale(1.0 / count))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapEstimate {
    pub train_cost: f64,
    pub test_cost: f64,
    /// `test_cost - train_cost`; positive means overfitting.
    pub gap: f64,
    /// False when any evaluated level was unstable (its cost is `+inf`).
    pub all_stable: bool,
}

fn mean_cost(family: &LevelFamily, base: &LqrProblem, k: &Mat, thetas: &[u64]) -> Result<(f64, bool)> {
    let mut total = 0.0;
    let mut stable = true;
    for &theta in thetas {
        let eval = level_cost(&family.get_level(theta), base, k)?;
        stable &= eval.stable;
        total += eval.cost;
    }
    Ok((total / thetas.len() as f64, stable))
}

pub fn generalization_gap(
    family: &LevelFamily,
    base: &LqrProblem,
    k: &Mat,
    train_thetas: &[u64],
    test_thetas: &[u64],
) -> Result<GapEstimate> {
    if train_thetas.is_empty() || test_thetas.is_empty() {
        return Err(Error::InvalidArgument("train and test level lists must be non-empty".into()));
    }
    let (train_cost, train_ok) = mean_cost(family, base, k, train_thetas)?;
    let (test_cost, test_ok) = mean_cost(family, base, k, test_thetas)?;
    Ok(GapEstimate {
        train_cost,
        test_cost,
        gap: test_cost - train_cost,
        all_stable: train_ok && test_ok,
    })
}

pub fn train_thetas(count: usize) -> Vec<u64> {
    (0..count as u64).collect()
}

pub fn test_thetas(count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| TEST_THETA_OFFSET + i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::default_problem;
    use crate::mat::sample_gaussian;

    fn family(d_noise: usize, seed: u64) -> LevelFamily {
        let base = default_problem(&mut SeededRng::new(seed));
        make_family(&base, d_noise, seed).unwrap()
    }

    #[test]
    fn observation_dimension() {
        let f = family(100, 1);
        assert_eq!(f.obs_dim(), 110);
        assert_eq!(f.get_level(0).stacked.shape(), (110, 10));
    }

    #[test]
    fn family_is_deterministic() {
        assert_eq!(family(20, 4).w_c(), family(20, 4).w_c());
    }

    #[test]
    fn too_small_noise_dimension_rejected() {
        let base = default_problem(&mut SeededRng::new(1));
        assert!(matches!(make_family(&base, 5, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn levels_are_deterministic_and_distinct() {
        let f = family(30, 2);
        let a = f.get_level(5);
        assert_eq!(a, f.get_level(5));
        let b = f.get_level(6);
        assert!((&a.w_theta - &b.w_theta).frobenius() > 0.1);
        let gram = &a.w_theta.transpose() * &a.w_theta;
        assert!(gram.max_abs_diff(&Mat::identity(10)) < 1e-12);
        assert_eq!(a.stacked.block(0, 0, 10, 10), *f.w_c());
    }

    #[test]
    fn effective_policy_identities() {
        let f = family(30, 3);
        let level = f.get_level(1);
        let p = sample_gaussian(&mut SeededRng::new(9), 10, 10, 1.0).unwrap();
        let k = f.signal_only_policy(&p).unwrap();
        assert!(effective_policy(&level, &k).unwrap().max_abs_diff(&p) < 1e-12);
        let zero = effective_policy(&level, &Mat::zeros(10, 40)).unwrap();
        assert!(zero.frobenius() == 0.0);
        for alpha in [0.0, 0.3, 0.7, 1.0] {
            let ka = f.alpha_policy(&level, &p, alpha).unwrap();
            assert!(effective_policy(&level, &ka).unwrap().max_abs_diff(&p) < 1e-12);
        }
        assert!(effective_policy(&level, &Mat::zeros(10, 39)).is_err());
    }

    #[test]
    fn gap_is_zero_on_training_set_and_for_signal_policies() {
        let f = family(30, 3);
        let base = f.base().clone();
        let p = base.a().scale(0.5);
        let k = f.signal_only_policy(&p).unwrap();
        let same = generalization_gap(&f, &base, &k, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(same.gap, 0.0);
        let est = generalization_gap(&f, &base, &k, &[0], &test_thetas(5)).unwrap();
        assert!(est.gap.abs() < 1e-10);
        assert!(generalization_gap(&f, &base, &k, &[], &[1]).is_err());
    }

    #[test]
    fn level_gradient_matches_central_differences() {
        let f = family(12, 8);
        let base = f.base().clone();
        let level = f.get_level(3);
        let k = sample_gaussian(&mut SeededRng::new(2), 10, 22, 0.0005).unwrap();
        let g = level_gradient(&level, &base, &k).unwrap();
        let h = 1e-5;
        for i in 0..10 {
            for j in (0..22).step_by(3) {
                let bump = |d: f64| {
                    let mut m = k.clone().into_na();
                    m[(i, j)] += d;
                    level_cost(&level, &base, &Mat::new(m).unwrap()).unwrap().cost
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = g.get(i, j);
                if an.abs() > 1e-8 {
                    assert!((fd - an).abs() <= 1e-4 * an.abs(), "({i},{j}) {fd} vs {an}");
                }
            }
        }
    }
}
