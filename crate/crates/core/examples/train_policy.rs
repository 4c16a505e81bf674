//! Gradient descent on a layered linear policy over a few training levels.

use obslab::experiment::sweep::stabilize_init;
use obslab::lqr::default_problem;
use obslab::mat::{norms, SeededRng};
use obslab::obs::{generalization_gap, make_family, test_thetas, train_thetas, LevelsObjective};
use obslab::policy::{chain_shapes, compose, init_policy, train, InitKind, TrainConfig};

fn main() -> obslab::Result<()> {
    let rng = SeededRng::new(5);
    let base = default_problem(&mut rng.child(1));
    let family = make_family(&base, 100, 5)?;
    let train_ids = train_thetas(4);
    let objective = LevelsObjective::new(&family, &train_ids)?;

    let cfg = TrainConfig {
        step_size: 5e-5,
        max_steps: 1500,
        grad_tol: 1e-8,
        init_scale: 0.5,
        init_kind: InitKind::Orthogonal,
        log_every: 250,
    };
    let shapes = chain_shapes(family.n(), family.obs_dim(), 2, 100);
    let (init, shrinks) = stabilize_init(init_policy(&shapes, &cfg, &mut rng.child(3))?, &objective)?;
    println!("layers {shapes:?}, init halved {shrinks} times");

    let out = train(init, &objective, &cfg)?;
    for t in &out.trace {
        println!("step {:>5}  train cost {:>10.4}  grad norm {:.3e}", t.step, t.train_cost, t.grad_norm);
    }
    let k = compose(&out.policy);
    let est = generalization_gap(&family, &base, &k, &train_ids, &test_thetas(100))?;
    let n = norms(&k);
    println!("train {:.4}  test {:.4}  gap {:.4}", est.train_cost, est.test_cost, est.gap);
    println!("composed K: spectral {:.4}  frobenius {:.4}  nuclear {:.4}", n.spectral, n.frobenius, n.nuclear);
    Ok(())
}
