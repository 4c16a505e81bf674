//! Infinite-horizon discrete LQR with exact cost and analytic policy gradient.
//!
//! Dynamics are `x_{t+1} = (A - B P) x_t` under the linear policy `u = -P x`;
//! the cost of `P` is `trace(P_K Sigma0)` where `P_K` solves the closed-loop
//! Lyapunov equation `P_K = Q + P^T R P + (A - BP)^T P_K (A - BP)`.

use crate::error::{dim_err, Error, Result};
use crate::mat::{lyapunov_pair_stable, sample_semi_orthogonal, symmetrize, Mat, SeededRng};

/// Default state dimension.
pub const DEFAULT_N: usize = 10;
/// Default scale of the orthogonal dynamics matrix.
pub const DEFAULT_A_SCALE: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub struct LqrProblem {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    sigma0: Mat,
}

impl LqrProblem {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, sigma0: Mat) -> Result<Self> {
        let n = a.rows();
        for (name, m) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r), ("Sigma0", &sigma0)] {
            if m.shape() != (n, n) {
                return dim_err(format!("{name} must be {n}x{n}, got {:?}", m.shape()));
            }
        }
        for (name, m) in [("Q", &q), ("R", &r), ("Sigma0", &sigma0)] {
            if !m.is_symmetric(1e-12) {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
        }
        let r_min = r
            .as_na()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !(r_min > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "R must be positive definite (min eigenvalue {r_min})"
            )));
        }
        Ok(LqrProblem { a, b, q, r, sigma0 })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn r(&self) -> &Mat {
        &self.r
    }

    pub fn sigma0(&self) -> &Mat {
        &self.sigma0
    }

    pub fn closed_loop(&self, policy: &Mat) -> Mat {
        &self.a - &(&self.b * policy)
    }
}

/// `A = a_scale * U` with `U` Haar from `O(n)`, and `B = Q = R = Sigma0 = I`.
pub fn scaled_orthogonal_problem(rng: &mut SeededRng, n: usize, a_scale: f64) -> Result<LqrProblem> {
    let a = sample_semi_orthogonal(rng, n, n, a_scale)?;
    let id = Mat::identity(n);
    LqrProblem::new(a, id.clone(), id.clone(), id.clone(), id)
}

/// The reference instance: `n = 10`, `A = 0.99 U`, identity `B, Q, R, Sigma0`.
pub fn default_problem(rng: &mut SeededRng) -> LqrProblem {
    scaled_orthogonal_problem(rng, DEFAULT_N, DEFAULT_A_SCALE).expect("default dimensions are valid")
}

/// Result of evaluating a policy. Unstable policies carry `cost = +inf`.
#[derive(Clone, Debug)]
pub struct LqrEval {
    pub cost: f64,
    pub value_matrix: Option<Mat>,
    pub state_covariance: Option<Mat>,
    pub stable: bool,
    pub spectral_radius: f64,
}

impl LqrEval {
    fn unstable(spectral_radius: f64) -> Self {
        LqrEval {
            cost: f64::INFINITY,
            value_matrix: None,
            state_covariance: None,
            stable: false,
            spectral_radius,
        }
    }
}

fn check_policy(problem: &LqrProblem, policy: &Mat) -> Result<()> {
    let n = problem.n();
    if policy.shape() != (n, n) {
        return dim_err(format!("policy must be {n}x{n}, got {:?}", policy.shape()));
    }
    Ok(())
}

pub fn lqr_cost(problem: &LqrProblem, policy: &Mat) -> Result<LqrEval> {
    check_policy(problem, policy)?;
    let acl = problem.closed_loop(policy);
    let rho = acl.spectral_radius()?;
    if !(rho < 1.0) {
        return Ok(LqrEval::unstable(rho));
    }
    let rhs = &problem.q + &(&(&policy.transpose() * &problem.r) * policy);
    let (value, sigma) = match lyapunov_pair_stable(&acl, &symmetrize(&rhs), &problem.sigma0) {
        Ok(pair) => pair,
        Err(Error::Unstable { .. }) | Err(Error::Singular(_)) | Err(Error::NonFinite { .. }) => {
            return Ok(LqrEval::unstable(rho))
        }
        Err(e) => return Err(e),
    };
    let cost = (&value * &problem.sigma0).trace();
    if !cost.is_finite() {
        return Ok(LqrEval::unstable(rho));
    }
    Ok(LqrEval {
        cost,
        value_matrix: Some(value),
        state_covariance: Some(sigma),
        stable: true,
        spectral_radius: rho,
    })
}

/// `2 [(R + B^T P_K B) P - B^T P_K A] Sigma_P` from an already computed evaluation.
pub fn gradient_from_eval(problem: &LqrProblem, policy: &Mat, eval: &LqrEval) -> Result<Mat> {
    check_policy(problem, policy)?;
    let (Some(pk), Some(sigma)) = (&eval.value_matrix, &eval.state_covariance) else {
        return Err(Error::Unstable { spectral_radius: eval.spectral_radius });
    };
    let bt = problem.b.transpose();
    let bt_pk = &bt * pk;
    let gain = &(&problem.r + &(&bt_pk * &problem.b)) * policy;
    let inner = &gain - &(&bt_pk * &problem.a);
    Ok((&inner * sigma).scale(2.0))
}

pub fn lqr_gradient(problem: &LqrProblem, policy: &Mat) -> Result<Mat> {
    let eval = lqr_cost(problem, policy)?;
    gradient_from_eval(problem, policy, &eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::sample_gaussian;

    fn scalar_problem(a: f64) -> LqrProblem {
        let one = Mat::identity(1);
        LqrProblem::new(
            Mat::from_row_slice(1, 1, &[a]).unwrap(),
            one.clone(),
            one.clone(),
            one.clone(),
            one,
        )
        .unwrap()
    }

    fn scalar(v: f64) -> Mat {
        Mat::from_row_slice(1, 1, &[v]).unwrap()
    }

    #[test]
    fn immediate_closed_loop_cost() {
        let id = Mat::identity(3);
        let p = LqrProblem::new(Mat::zeros(3, 3), id.clone(), id.clone(), id.clone(), id).unwrap();
        let eval = lqr_cost(&p, &Mat::zeros(3, 3)).unwrap();
        assert!(eval.stable);
        assert!((eval.cost - 3.0).abs() < 1e-14);
        assert!(eval.value_matrix.unwrap().max_abs_diff(&Mat::identity(3)) < 1e-14);
    }

    #[test]
    fn default_problem_zero_policy() {
        let p = default_problem(&mut SeededRng::new(3));
        let eval = lqr_cost(&p, &Mat::zeros(10, 10)).unwrap();
        let want = 10.0 / (1.0 - 0.99f64 * 0.99);
        assert!((eval.cost - want).abs() < 1e-8 * want, "{} vs {want}", eval.cost);
        assert!((want - 502.5126).abs() < 1e-4);
    }

    #[test]
    fn default_problem_shape() {
        let p1 = default_problem(&mut SeededRng::new(1));
        let p2 = default_problem(&mut SeededRng::new(2));
        assert!((p1.a().spectral() - 0.99).abs() < 1e-12);
        assert_eq!(p1.b(), &Mat::identity(10));
        assert_ne!(p1.a(), p2.a());
        assert_eq!((p1.b(), p1.q(), p1.r()), (p2.b(), p2.q(), p2.r()));
    }

    #[test]
    fn scalar_hand_evaluation() {
        let eval = lqr_cost(&scalar_problem(0.5), &scalar(0.5)).unwrap();
        assert!((eval.cost - 1.25).abs() < 1e-14);
    }

    #[test]
    fn unstable_policy_is_a_result_state() {
        let eval = lqr_cost(&scalar_problem(0.5), &scalar(2.0)).unwrap();
        assert!(!eval.stable);
        assert!(eval.cost.is_infinite());
        assert!(matches!(
            lqr_gradient(&scalar_problem(0.5), &scalar(2.0)),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = default_problem(&mut SeededRng::new(3));
        assert!(matches!(lqr_cost(&p, &Mat::zeros(10, 11)), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_dynamics_zero_gradient() {
        let id = Mat::identity(4);
        let p = LqrProblem::new(Mat::zeros(4, 4), id.clone(), id.clone(), id.clone(), id).unwrap();
        let g = lqr_gradient(&p, &Mat::zeros(4, 4)).unwrap();
        assert!(g.frobenius() < 1e-15);
    }

    #[test]
    fn scalar_gradient_closed_form() {
        let (a, k) = (0.5f64, 0.9f64);
        let den = 1.0 - (a - k).powi(2);
        let want = (2.0 * k * den - (1.0 + k * k) * 2.0 * (a - k)) / (den * den);
        let cost = (1.0 + k * k) / den;
        let eval = lqr_cost(&scalar_problem(a), &scalar(k)).unwrap();
        assert!((eval.cost - cost).abs() < 1e-12);
        let g = lqr_gradient(&scalar_problem(a), &scalar(k)).unwrap();
        assert!((g.get(0, 0) - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = SeededRng::new(21);
        let prob = default_problem(&mut rng);
        // small perturbations of the zero policy stay stable
        let policy = sample_gaussian(&mut rng, 10, 10, 0.002).unwrap();
        assert!(lqr_cost(&prob, &policy).unwrap().stable);
        let g = lqr_gradient(&prob, &policy).unwrap();
        let h = 1e-5;
        for i in 0..10 {
            for j in 0..10 {
                let bump = |d: f64| {
                    let mut m = policy.clone().into_na();
                    m[(i, j)] += d;
                    lqr_cost(&prob, &Mat::new(m).unwrap()).unwrap().cost
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = g.get(i, j);
                if an.abs() > 1e-8 {
                    assert!((fd - an).abs() <= 1e-4 * an.abs(), "({i},{j}) fd {fd} analytic {an}");
                }
            }
        }
    }

    #[test]
    fn cost_bounded_below_by_state_cost() {
        let mut rng = SeededRng::new(5);
        let prob = default_problem(&mut rng);
        let floor = (prob.q() * prob.sigma0()).trace();
        for _ in 0..20 {
            let policy = sample_gaussian(&mut rng, 10, 10, 0.003).unwrap();
            let eval = lqr_cost(&prob, &policy).unwrap();
            if eval.stable {
                assert!(eval.cost >= floor);
            }
        }
    }
}
