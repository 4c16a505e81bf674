//! Exact infinite-horizon cost and analytic gradient on the default problem.

use obslab::lqr::{default_problem, lqr_cost, lqr_gradient};
use obslab::mat::{solve_discrete_lyapunov, Mat, SeededRng};

fn main() -> obslab::Result<()> {
    let problem = default_problem(&mut SeededRng::new(7));
    let n = problem.n();

    let zero = Mat::zeros(n, n);
    let eval = lqr_cost(&problem, &zero)?;
    println!("zero policy: cost {:.6} (10 / (1 - 0.99^2) = {:.6})", eval.cost, 10.0 / (1.0 - 0.99f64.powi(2)));

    let half = problem.a().scale(0.5);
    let eval = lqr_cost(&problem, &half)?;
    let acl = problem.closed_loop(&half);
    let rhs = problem.q() + &(&half.transpose() * &(problem.r() * &half));
    let pk = solve_discrete_lyapunov(&acl, &rhs)?;
    let residual = &(&pk - &(&(&acl.transpose() * &pk) * &acl)) - &rhs;
    println!("P = 0.5 A: cost {:.6}, spectral radius {:.3}, Lyapunov residual {:.2e}", eval.cost, acl.spectral_radius()?, residual.frobenius());

    let grad = lqr_gradient(&problem, &half)?;
    println!("gradient Frobenius norm {:.4}", grad.frobenius());

    let unstable = problem.a().scale(-1.5);
    let eval = lqr_cost(&problem, &unstable)?;
    println!("P = -1.5 A: stable {}, cost {}", eval.stable, eval.cost);
    Ok(())
}
