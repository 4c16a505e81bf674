//! A single training level admits a whole line of optimal observation policies.
//!
//! `K_alpha = [alpha P W_c^T, (1 - alpha) P W_theta^T]` reproduces the same
//! state policy `P` on the training level for every alpha, so the training
//! cost cannot tell them apart, while held-out levels can.

use obslab::lqr::default_problem;
use obslab::mat::SeededRng;
use obslab::obs::{generalization_gap, level_cost, make_family, test_thetas, train_thetas};

fn main() -> obslab::Result<()> {
    let base = default_problem(&mut SeededRng::new(3));
    let family = make_family(&base, 100, 11)?;
    let train = train_thetas(1);
    let level = family.get_level(train[0]);
    let state_policy = base.a().scale(0.5);

    println!("{:>6} {:>12} {:>12} {:>10}", "alpha", "train", "test", "gap");
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let k = family.alpha_policy(&level, &state_policy, alpha)?;
        let on_level = level_cost(&level, &base, &k)?.cost;
        let est = generalization_gap(&family, &base, &k, &train, &test_thetas(100))?;
        assert!((on_level - est.train_cost).abs() < 1e-12);
        println!("{alpha:>6} {:>12.8} {:>12.6} {:>10.6}", est.train_cost, est.test_cost, est.gap);
    }
    Ok(())
}
