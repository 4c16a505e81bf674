//! Closed-form one-step LQR theory against Monte-Carlo and iterative descent.

use obslab::mat::{sample_gaussian, SeededRng};
use obslab::one_step::{
    cost_population, expected_generalization, gd_limit, k_min, sample_instance, verify_theorem, OneStepObjective,
    TheoremParams,
};
use obslab::policy::{train, LayeredPolicy, TrainConfig};

fn main() -> obslab::Result<()> {
    for m in [1, 2, 5, 10] {
        for psi in [0.0, 1.0] {
            let params = TheoremParams { n: 5, p: 50, m, psi };
            let e = expected_generalization(&params)?;
            let check = verify_theorem(&params, 500, &SeededRng::new(100 + m as u64))?;
            println!(
                "m={m:>2} psi={psi}  E1 {:.4}  E2 {:.4}  closed form {:.4}  empirical {:.4} +- {:.4}  z {:+.2}",
                e.e1, e.e2, check.closed_form, check.empirical_mean, check.std_error, check.z_score
            );
        }
    }

    let params = TheoremParams { n: 4, p: 20, m: 2, psi: 1.0 };
    let mut rng = SeededRng::new(9);
    let inst = sample_instance(&params, &mut rng)?;
    let k0 = sample_gaussian(&mut rng, 4, 24, 1.0)?;
    let lambda_max = (&inst.z.transpose() * &inst.z).singular_values()[0];
    let cfg = TrainConfig { step_size: params.m as f64 / lambda_max, max_steps: 20_000, grad_tol: 0.0, ..TrainConfig::default() };
    let objective = OneStepObjective { inst: &inst };
    let out = train(LayeredPolicy::new(vec![k0.clone()])?, &objective, &cfg)?;
    let limit = gd_limit(&inst, &k0)?;
    println!("iterative vs limit: {:.2e} Frobenius", (&out.policy.layers()[0] - &limit).frobenius());
    println!(
        "population cost: limit {:.4}, minimum-norm {:.4}",
        cost_population(&limit, &inst.w_c, 4, 20)?,
        cost_population(&k_min(&inst)?, &inst.w_c, 4, 20)?
    );
    Ok(())
}
