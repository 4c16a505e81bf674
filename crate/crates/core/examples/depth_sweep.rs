//! Gap, composed-policy norms and weight-counting terms against depth.
//!
//! Two seeds and 1000 steps; `examples/configs/sweep_depth.toml` is the full run.

use obslab::experiment::sweep::{run_sweep_depth, summarize};
use obslab::experiment::ExperimentConfig;

fn main() -> obslab::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 2;
    cfg.family.d_noise = vec![100];
    cfg.family.train_levels = vec![10];
    cfg.policy.depths = vec![1, 2, 4];
    cfg.policy.max_steps = 1000;

    let records = run_sweep_depth(&cfg)?;
    println!("{:<9} {:>8} {:>9} {:>9} {:>10} {:>12}", "arm", "gap", "spectral", "nuclear", "phi_fro", "phi_l1");
    for a in summarize(&records) {
        println!(
            "{:<9} {:>8} {:>9} {:>9} {:>10} {:>12}",
            a.arm,
            fmt(a.mean_gap),
            fmt(a.mean_spectral),
            fmt(a.mean_nuclear),
            fmt(a.mean_phi_frobenius),
            fmt(a.mean_phi_l1)
        );
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}
