//! Norm measures and margin distributions of a trained depth-2 policy.
//!
//! Writes `policy.stack` and `decisions.jsonl` into the directory given as the
//! first argument (default `examples/data`), the inputs read by
//! `obslab measures-report --config examples/configs/measures_report.toml`.

use std::path::PathBuf;

use obslab::experiment::ingest::{read_stack, write_decision_records, write_stack};
use obslab::experiment::report::measures_report;
use obslab::experiment::sweep::stabilize_init;
use obslab::lqr::default_problem;
use obslab::mat::SeededRng;
use obslab::measures::{records_from_stack, MeasureKind, WeightStack};
use obslab::obs::{make_family, train_thetas, LevelsObjective};
use obslab::policy::{chain_shapes, init_policy, train, InitKind, TrainConfig};

fn main() -> obslab::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("examples/data"));
    std::fs::create_dir_all(&dir).map_err(|e| obslab::Error::io(&dir, e))?;

    let rng = SeededRng::new(21);
    let base = default_problem(&mut rng.child(1));
    let family = make_family(&base, 20, 21)?;
    let objective = LevelsObjective::new(&family, &train_thetas(2))?;
    let cfg = TrainConfig {
        step_size: 5e-5,
        max_steps: 500,
        grad_tol: 1e-8,
        init_scale: 0.5,
        init_kind: InitKind::Orthogonal,
        log_every: 500,
    };
    let shapes = chain_shapes(family.n(), family.obs_dim(), 2, 16);
    let (init, _) = stabilize_init(init_policy(&shapes, &cfg, &mut rng.child(3))?, &objective)?;
    let out = train(init.clone(), &objective, &cfg)?;
    let stack = WeightStack::from_policy(&out.policy, Some(&init))?;

    let stack_path = dir.join("policy.stack");
    write_stack(&stack, &stack_path)?;
    let stack = read_stack(&stack_path)?;

    let mut srng = rng.child(4);
    let states: Vec<Vec<f64>> =
        (0..64).map(|_| (0..family.obs_dim()).map(|_| srng.standard_normal()).collect()).collect();
    let greedy: Vec<usize> = states
        .iter()
        .map(|s| {
            let l = stack.logits(s).expect("state has obs_dim entries");
            (0..l.len()).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap_or(0)
        })
        .collect();
    let records = records_from_stack(&stack, &states, &greedy)?;
    let records_path = dir.join("decisions.jsonl");
    write_decision_records(&records, &records_path)?;

    let kinds = [MeasureKind::SpectralL1, MeasureKind::Distance, MeasureKind::SpectralFro, MeasureKind::Identity];
    let (rep, _) = measures_report(&stack, Some(&records), &kinds)?;
    println!("wrote {} and {}", stack_path.display(), records_path.display());
    println!("phi_frobenius {:.4}  phi_l1 {:.4}", rep.phi_frobenius, rep.phi_l1);
    println!("product of spectral norms {:.4}, composed spectral {:.4}", rep.products.spectral, rep.composed.spectral);
    for m in &rep.margins {
        if let (Some(v), Some(s)) = (m.measure_value, m.summary) {
            println!("{:?}: R = {v:.4}, margin median {:.4e} in [{:.4e}, {:.4e}]", m.measure, s.median, s.min, s.max);
        }
    }
    Ok(())
}
