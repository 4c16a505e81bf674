//! One-step LQR: `s_0 ~ N(0, I)`, `s_1 = s_0 + K [W_c; W_theta] s_0`, cost
//! `0.5 ||s_1||^2`.
//!
//! With `m` levels whose noise projections are disjoint column blocks of one
//! Haar orthogonal matrix, the stacked matrix
//!
//! ```text
//! Z = [ W_c^T  W_1^T ]
//!     [  ...    ...  ]
//!     [ W_c^T  W_m^T ]
//! ```
//!
//! has a closed-form pseudoinverse and row-space projector, which give the
//! minimum-norm stationary point `K_min`, the gradient-descent limit
//! `K_inf = K_0 (I - P) + K_min`, and the expected population cost of that limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::mat::{pseudoinverse, sample_gaussian, sample_haar_orthogonal_partition, sample_semi_orthogonal, Mat, SeededRng};
use crate::policy::Objective;

/// Absolute tolerance for the closed-form versus SVD pseudoinverse check.
pub const PINV_AGREEMENT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub psi: f64,
}

impl TheoremParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.p % self.n != 0 {
            return Err(Error::InvalidArgument(format!("n ({}) must divide p ({})", self.n, self.p)));
        }
        if self.m == 0 || self.m > self.p / self.n {
            return Err(Error::InvalidArgument(format!(
                "m ({}) must lie in 1..={}",
                self.m,
                self.p / self.n
            )));
        }
        if !(self.psi >= 0.0) || !self.psi.is_finite() {
            return Err(Error::InvalidArgument(format!("psi must be non-negative, got {}", self.psi)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OneStepInstance {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub w_c: Mat,
    pub w_list: Vec<Mat>,
    pub z: Mat,
}

impl OneStepInstance {
    /// `[W_c; W_i]`, the `(n+p) x n` observation map of level `i`.
    pub fn stacked(&self, i: usize) -> Mat {
        Mat::vstack(&[&self.w_c, &self.w_list[i]]).expect("blocks share n columns")
    }

    fn noise_sum(&self) -> Mat {
        let mut it = self.w_list.iter();
        let first = it.next().expect("m >= 1").clone();
        it.fold(first, |acc, w| &acc + w)
    }
}

pub fn sample_instance(params: &TheoremParams, rng: &mut SeededRng) -> Result<OneStepInstance> {
    params.validate()?;
    let TheoremParams { n, p, m, .. } = *params;
    let w_list = sample_haar_orthogonal_partition(rng, p, n, m)?;
    let w_c = sample_semi_orthogonal(rng, n, n, 1.0)?;
    let wct = w_c.transpose();
    let rows: Vec<Mat> = w_list
        .iter()
        .map(|w| Mat::hstack(&[&wct, &w.transpose()]))
        .collect::<Result<_>>()?;
    let z = Mat::vstack(&rows.iter().collect::<Vec<_>>())?;
    Ok(OneStepInstance { n, p, m, w_c, w_list, z })
}

fn check_policy_shape(k: &Mat, n: usize, p: usize) -> Result<()> {
    if k.shape() != (n, n + p) {
        return dim_err(format!("policy must be {n}x{}, got {:?}", n + p, k.shape()));
    }
    Ok(())
}

fn residual(k: &Mat, w_c: &Mat, w_theta: &Mat) -> Result<(Mat, Mat)> {
    let n = w_c.rows();
    if w_c.shape() != (n, n) || w_theta.cols() != n {
        return dim_err("W_c must be n x n and W_theta must have n columns");
    }
    check_policy_shape(k, n, w_theta.rows())?;
    let s = Mat::vstack(&[w_c, w_theta])?;
    let r = &Mat::identity(n) + &(k * &s);
    Ok((r, s))
}

/// `0.5 ||I + K [W_c; W_theta]||_F^2`.
pub fn cost_sample(k: &Mat, w_c: &Mat, w_theta: &Mat) -> Result<f64> {
    let (r, _) = residual(k, w_c, w_theta)?;
    Ok(0.5 * r.frobenius().powi(2))
}

/// `(I + K [W_c; W_theta]) [W_c; W_theta]^T`.
pub fn grad_sample(k: &Mat, w_c: &Mat, w_theta: &Mat) -> Result<Mat> {
    let (r, s) = residual(k, w_c, w_theta)?;
    Ok(&r * &s.transpose())
}

/// Expectation of [`cost_sample`] over `W_theta ~ Unif(O(p, n))`:
/// `n/2 + 0.5 tr(K^T K diag(I, (n/p) I)) + tr(K [W_c; 0])`.
pub fn cost_population(k: &Mat, w_c: &Mat, n: usize, p: usize) -> Result<f64> {
    check_policy_shape(k, n, p)?;
    if w_c.shape() != (n, n) {
        return dim_err("W_c must be n x n");
    }
    let left = k.block(0, 0, n, n);
    let right = k.block(0, n, n, p);
    let quad = left.frobenius().powi(2) + (n as f64 / p as f64) * right.frobenius().powi(2);
    Ok(n as f64 / 2.0 + 0.5 * quad + (&left * w_c).trace())
}

fn z_pinv_closed_form(inst: &OneStepInstance) -> Mat {
    let m = inst.m as f64;
    let top = inst.w_c.scale(1.0 / (m + 1.0));
    let sum = inst.noise_sum();
    let cols: Vec<Mat> = inst
        .w_list
        .iter()
        .map(|wj| {
            // (m/(m+1)) W_j - (1/(m+1)) sum_{i != j} W_i
            let others = &sum - wj;
            let bottom = &wj.scale(m / (m + 1.0)) - &others.scale(1.0 / (m + 1.0));
            Mat::vstack(&[&top, &bottom]).expect("blocks share n columns")
        })
        .collect();
    Mat::hstack(&cols.iter().collect::<Vec<_>>()).expect("blocks share n+p rows")
}

/// Closed-form `Z^+`, checked against the SVD pseudoinverse.
pub fn z_pinv(inst: &OneStepInstance) -> Result<Mat> {
    let closed = z_pinv_closed_form(inst);
    let svd = pseudoinverse(&inst.z);
    let diff = closed.max_abs_diff(&svd);
    if !(diff <= PINV_AGREEMENT_TOL) {
        return Err(Error::Consistency(format!(
            "closed-form pseudoinverse differs from SVD by {diff:e}"
        )));
    }
    Ok(closed)
}

/// Projector onto the row space of `Z`, assembled from its block formula.
pub fn projector(inst: &OneStepInstance) -> Mat {
    let (n, p) = (inst.n, inst.p);
    let m = inst.m as f64;
    let sum = inst.noise_sum();
    let wc = &inst.w_c;
    let tl = (wc * &wc.transpose()).scale(m / (m + 1.0));
    let tr = (wc * &sum.transpose()).scale(1.0 / (m + 1.0));
    let diag = inst
        .w_list
        .iter()
        .map(|w| w * &w.transpose())
        .fold(Mat::zeros(p, p), |acc, x| &acc + &x);
    // sum_{i != j} W_i W_j^T = (sum W)(sum W)^T - sum W_i W_i^T
    let cross = &(&sum * &sum.transpose()) - &diag;
    let br = &diag.scale(m / (m + 1.0)) - &cross.scale(1.0 / (m + 1.0));
    let top = Mat::hstack(&[&tl, &tr]).expect("n rows");
    let bottom = Mat::hstack(&[&tr.transpose(), &br]).expect("p rows");
    let out = Mat::vstack(&[&top, &bottom]).expect("n+p columns");
    debug_assert_eq!(out.shape(), (n + p, n + p));
    out
}

/// `K_min = -[I_n ... I_n] (Z^+)^T`.
pub fn k_min(inst: &OneStepInstance) -> Result<Mat> {
    let zp = z_pinv(inst)?;
    let n = inst.n;
    let rows = n + inst.p;
    let mut acc = zp.block(0, 0, rows, n);
    for j in 1..inst.m {
        acc = &acc + &zp.block(0, j * n, rows, n);
    }
    Ok((-&acc).transpose())
}

/// Limit of gradient descent on the `m`-level cost from `K0`: `K0 (I - P) + K_min`.
pub fn gd_limit(inst: &OneStepInstance, k0: &Mat) -> Result<Mat> {
    check_policy_shape(k0, inst.n, inst.p)?;
    let proj = projector(inst);
    let complement = &Mat::identity(inst.n + inst.p) - &proj;
    Ok(&(k0 * &complement) + &k_min(inst)?)
}

/// Average one-step cost over the instance's `m` levels.
#[derive(Clone, Debug)]
pub struct OneStepObjective<'a> {
    pub inst: &'a OneStepInstance,
}

impl Objective for OneStepObjective<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.inst.n, self.inst.n + self.inst.p)
    }

    fn cost_and_gradient(&self, k: &Mat) -> Result<(f64, Option<Mat>)> {
        let m = self.inst.m as f64;
        let mut cost = 0.0;
        let mut grad = Mat::zeros(self.inst.n, self.inst.n + self.inst.p);
        for w in &self.inst.w_list {
            cost += cost_sample(k, &self.inst.w_c, w)?;
            grad = &grad + &grad_sample(k, &self.inst.w_c, w)?;
        }
        Ok((cost / m, Some(grad.scale(1.0 / m))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedError {
    pub e1: f64,
    pub e2: f64,
    pub total: f64,
}

/// Expected population cost of the gradient-descent limit point.
///
/// `E1` is the cost of the minimum-norm stationary point (independent of the
/// sampled projections); `E2` is the contribution of a Gaussian `K_0` with
/// entry variance `psi^2`.
pub fn expected_generalization(params: &TheoremParams) -> Result<ExpectedError> {
    params.validate()?;
    let n = params.n as f64;
    let p = params.p as f64;
    let m = params.m as f64;
    let m1 = m + 1.0;
    let e1 = n / 2.0 + m * m * n / (2.0 * m1 * m1) + n * n * m / (2.0 * p * m1 * m1) - m * n / m1;
    let e2 = params.psi * params.psi * n * n / 2.0 * ((m + 2.0) / m1 - m * m / m1 * (n / p));
    Ok(ExpectedError { e1, e2, total: e1 + e2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub trials: usize,
    pub empirical_mean: f64,
    pub std_error: f64,
    pub closed_form: f64,
    pub z_score: f64,
}

/// Population cost of one Monte-Carlo draw of `(W, W_c, K0)`.
pub fn theorem_trial(params: &TheoremParams, rng: &mut SeededRng) -> Result<f64> {
    let inst = sample_instance(params, rng)?;
    let k0 = sample_gaussian(rng, params.n, params.n + params.p, params.psi)?;
    let k_inf = gd_limit(&inst, &k0)?;
    cost_population(&k_inf, &inst.w_c, params.n, params.p)
}

/// Monte-Carlo check of [`expected_generalization`]; trial `t` uses `rng.child(t)`.
///
/// When every trial gives the same value up to rounding (e.g. `psi = 0`)
/// the standard error is floored at `1e-12 (1 + |closed form|)`.
pub fn verify_theorem(params: &TheoremParams, trials: usize, rng: &SeededRng) -> Result<TheoremCheck> {
    params.validate()?;
    if trials < 2 {
        return Err(Error::InvalidArgument("at least two trials are needed for a standard error".into()));
    }
    let values = (0..trials as u64)
        .into_par_iter()
        .map(|t| theorem_trial(params, &mut rng.child(t)))
        .collect::<Result<Vec<f64>>>()?;
    let closed_form = expected_generalization(params)?.total;
    let count = trials as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let std_error = (var / count).sqrt();
    let floor = 1e-12 * (1.0 + closed_form.abs());
    Ok(TheoremCheck {
        trials,
        empirical_mean: mean,
        std_error,
        closed_form,
        z_score: (mean - closed_form) / std_error.max(floor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, p: usize, m: usize, psi: f64) -> TheoremParams {
        TheoremParams { n, p, m, psi }
    }

    #[test]
    fn instance_shape_and_gram() {
        let inst = sample_instance(&params(2, 6, 3, 1.0), &mut SeededRng::new(1)).unwrap();
        assert_eq!(inst.z.shape(), (6, 8));
        let gram = &inst.z * &inst.z.transpose();
        for bi in 0..3 {
            for bj in 0..3 {
                let want = if bi == bj { Mat::identity(2).scale(2.0) } else { Mat::identity(2) };
                assert!(gram.block(bi * 2, bj * 2, 2, 2).max_abs_diff(&want) < 1e-10);
            }
        }
    }

    #[test]
    fn instance_is_deterministic() {
        let a = sample_instance(&params(2, 6, 2, 1.0), &mut SeededRng::new(5)).unwrap();
        let b = sample_instance(&params(2, 6, 2, 1.0), &mut SeededRng::new(5)).unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.w_c, b.w_c);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(params(3, 10, 1, 1.0).validate().is_err());
        assert!(params(2, 6, 4, 1.0).validate().is_err());
        assert!(params(2, 6, 0, 1.0).validate().is_err());
        assert!(expected_generalization(&params(2, 6, 4, 1.0)).is_err());
    }

    #[test]
    fn sample_cost_special_points() {
        let inst = sample_instance(&params(3, 9, 1, 1.0), &mut SeededRng::new(2)).unwrap();
        let w = &inst.w_list[0];
        assert!((cost_sample(&Mat::zeros(3, 12), &inst.w_c, w).unwrap() - 1.5).abs() < 1e-15);
        let kstar = Mat::hstack(&[&(-&inst.w_c.transpose()), &Mat::zeros(3, 9)]).unwrap();
        assert!(cost_sample(&kstar, &inst.w_c, w).unwrap() < 1e-28);
        assert!(cost_population(&kstar, &inst.w_c, 3, 9).unwrap().abs() < 1e-14);
        assert!((cost_population(&Mat::zeros(3, 12), &inst.w_c, 3, 9).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_at_zero_is_stacked_transpose() {
        let inst = sample_instance(&params(2, 4, 2, 1.0), &mut SeededRng::new(3)).unwrap();
        let g = grad_sample(&Mat::zeros(2, 6), &inst.w_c, &inst.w_list[1]).unwrap();
        assert!(g.max_abs_diff(&inst.stacked(1).transpose()) < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = SeededRng::new(4);
        let inst = sample_instance(&params(2, 6, 2, 1.0), &mut rng).unwrap();
        let k = sample_gaussian(&mut rng, 2, 8, 1.0).unwrap();
        let w = &inst.w_list[0];
        let g = grad_sample(&k, &inst.w_c, w).unwrap();
        let h = 1e-5;
        for i in 0..2 {
            for j in 0..8 {
                let bump = |d: f64| {
                    let mut m = k.clone().into_na();
                    m[(i, j)] += d;
                    cost_sample(&Mat::new(m).unwrap(), &inst.w_c, w).unwrap()
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                assert!((fd - g.get(i, j)).abs() <= 1e-6 * (1.0 + g.get(i, j).abs()));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let inst = sample_instance(&params(2, 4, 1, 1.0), &mut SeededRng::new(3)).unwrap();
        assert!(cost_sample(&Mat::zeros(2, 5), &inst.w_c, &inst.w_list[0]).is_err());
        assert!(cost_population(&Mat::zeros(2, 5), &inst.w_c, 2, 4).is_err());
        assert!(gd_limit(&inst, &Mat::zeros(3, 6)).is_err());
    }

    #[test]
    fn single_level_closed_forms() {
        let inst = sample_instance(&params(3, 6, 1, 1.0), &mut SeededRng::new(6)).unwrap();
        let zp = z_pinv(&inst).unwrap();
        assert!(zp.block(0, 0, 3, 3).max_abs_diff(&inst.w_c.scale(0.5)) < 1e-15);
        assert!(zp.block(3, 0, 6, 3).max_abs_diff(&inst.w_list[0].scale(0.5)) < 1e-15);
        let km = k_min(&inst).unwrap();
        let want = Mat::hstack(&[&inst.w_c.transpose().scale(-0.5), &inst.w_list[0].transpose().scale(-0.5)]).unwrap();
        assert!(km.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn projector_properties() {
        let inst = sample_instance(&params(2, 8, 3, 1.0), &mut SeededRng::new(7)).unwrap();
        let p = projector(&inst);
        assert!((&p * &p).max_abs_diff(&p) < 1e-10);
        assert!(p.is_symmetric(1e-12));
        assert!((p.trace() - 6.0).abs() < 1e-10);
        let tl = (&inst.w_c * &inst.w_c.transpose()).scale(0.75);
        assert!(p.block(0, 0, 2, 2).max_abs_diff(&tl) < 1e-12);
        let zzp = &inst.z * &z_pinv(&inst).unwrap();
        assert!(zzp.max_abs_diff(&Mat::identity(6)) < 1e-10);
    }

    #[test]
    fn k_min_interpolates_and_is_stationary() {
        let inst = sample_instance(&params(3, 12, 3, 1.0), &mut SeededRng::new(8)).unwrap();
        let km = k_min(&inst).unwrap();
        for w in &inst.w_list {
            assert!(cost_sample(&km, &inst.w_c, w).unwrap() <= 1e-16 * 3.0);
        }
        let (_, g) = OneStepObjective { inst: &inst }.cost_and_gradient(&km).unwrap();
        let z2 = inst.z.frobenius().powi(2);
        assert!(g.unwrap().frobenius() <= 1e-8 * (1.0 + z2));
    }

    #[test]
    fn k_min_has_minimum_norm() {
        let mut rng = SeededRng::new(9);
        let inst = sample_instance(&params(2, 6, 2, 1.0), &mut rng).unwrap();
        let km = k_min(&inst).unwrap();
        let comp = &Mat::identity(8) - &projector(&inst);
        for _ in 0..10 {
            let noise = &sample_gaussian(&mut rng, 2, 8, 1.0).unwrap() * &comp;
            let other = &km + &noise;
            assert!(other.frobenius() > km.frobenius());
            // still a solution of the stationarity equation
            let lhs = &(&other * &inst.z.transpose()) * &inst.z;
            let rhs = &(&km * &inst.z.transpose()) * &inst.z;
            assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }

    #[test]
    fn gd_limit_special_cases() {
        let mut rng = SeededRng::new(10);
        let inst = sample_instance(&params(2, 6, 2, 1.0), &mut rng).unwrap();
        let km = k_min(&inst).unwrap();
        assert!(gd_limit(&inst, &Mat::zeros(2, 8)).unwrap().max_abs_diff(&km) < 1e-14);
        let in_range = &sample_gaussian(&mut rng, 2, 8, 1.0).unwrap() * &projector(&inst);
        assert!(gd_limit(&inst, &in_range).unwrap().max_abs_diff(&km) < 1e-12);
        let k0 = sample_gaussian(&mut rng, 2, 8, 1.0).unwrap();
        let kinf = gd_limit(&inst, &k0).unwrap();
        assert!(gd_limit(&inst, &kinf).unwrap().max_abs_diff(&kinf) < 1e-12);
    }

    #[test]
    fn expected_generalization_values() {
        let e = expected_generalization(&params(10, 1000, 10, 1.0)).unwrap();
        assert!((e.e1 - 0.0454545).abs() < 1e-6, "{}", e.e1);
        assert!((e.e2 - 50.0).abs() < 1e-12, "{}", e.e2);
        assert!((e.total - 50.0454545).abs() < 1e-6);
        let e0 = expected_generalization(&params(10, 1000, 10, 0.0)).unwrap();
        assert_eq!(e0.total, e0.e1);
        let tiny = expected_generalization(&params(1, 1, 1, 0.0)).unwrap();
        assert!((tiny.total - 0.25).abs() < 1e-15);
    }

    #[test]
    fn e1_decreases_in_level_count() {
        let e1: Vec<f64> = (1..=10)
            .map(|m| expected_generalization(&params(10, 1000, m, 0.0)).unwrap().e1)
            .collect();
        assert!(e1.windows(2).all(|w| w[1] < w[0]), "{e1:?}");
    }

    #[test]
    fn k_min_population_cost_is_e1() {
        // E1 does not depend on the particular projections
        let pr = params(2, 8, 3, 0.0);
        let e1 = expected_generalization(&pr).unwrap().e1;
        for seed in 0..5 {
            let inst = sample_instance(&pr, &mut SeededRng::new(seed)).unwrap();
            let c = cost_population(&k_min(&inst).unwrap(), &inst.w_c, 2, 8).unwrap();
            assert!((c - e1).abs() < 1e-12);
        }
    }

    #[test]
    fn verify_needs_two_trials() {
        assert!(verify_theorem(&params(2, 4, 1, 1.0), 1, &SeededRng::new(1)).is_err());
    }

    #[test]
    fn verify_small_cell() {
        let check = verify_theorem(&params(5, 50, 2, 1.0), 500, &SeededRng::new(17)).unwrap();
        assert!(check.z_score.abs() <= 3.0, "{check:?}");
    }

    #[test]
    fn verify_zero_init_concentrates_on_e1() {
        let pr = params(5, 50, 3, 0.0);
        let check = verify_theorem(&pr, 100, &SeededRng::new(3)).unwrap();
        let e1 = expected_generalization(&pr).unwrap().e1;
        assert!((check.empirical_mean - e1).abs() < 1e-12);
        assert!(check.z_score.abs() <= 3.0, "{check:?}");
    }
}
