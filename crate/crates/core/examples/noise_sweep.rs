//! Generalization gap against noise dimension, run through the library.
//!
//! Reduced to three seeds and 1000 steps so it finishes quickly; the full
//! setting lives in `examples/configs/sweep_noise.toml`.

use obslab::experiment::sweep::{gap_slope, run_sweep_noise_dim, summarize};
use obslab::experiment::{ExperimentConfig, ExperimentKind};

fn main() -> obslab::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 3;
    cfg.family.d_noise = vec![50, 100, 200, 400];
    cfg.policy.max_steps = 1000;

    let records = run_sweep_noise_dim(&cfg)?;
    let arms = summarize(&records);
    for a in &arms {
        println!("{:<12} mean gap {:>8}  std {:>8}  ({} finite of {})", a.arm, fmt(a.mean_gap), fmt(a.std_gap), a.finite, a.trials);
    }
    match gap_slope(&cfg, ExperimentKind::SweepNoiseDim, &arms)? {
        Some(s) => println!("log-log slope of mean gap vs d_noise: {s:.3}"),
        None => println!("slope undefined (non-positive mean gap)"),
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}
