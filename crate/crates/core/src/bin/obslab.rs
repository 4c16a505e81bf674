use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use obslab::experiment::run::{run_from_file, Overrides};
use obslab::experiment::ExperimentKind;

#[derive(Parser)]
#[command(name = "obslab", version, about = "Seeded LQR observational-overfitting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generalization gap against noise dimension.
    SweepNoise(Common),
    /// Gap and norms against the number of layers.
    SweepDepth(Common),
    /// Gap and norms against hidden width of a two-layer policy.
    SweepWidth(Common),
    /// Gap against the number of training levels.
    SweepLevels(Common),
    /// Monte-Carlo check of the one-step expected generalization formula.
    VerifyTheorem(Common),
    /// Norm measures and margin distributions of a stored weight stack.
    MeasuresReport(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Store per-trial wall time in sweep records.
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::SweepNoise(c) => (ExperimentKind::SweepNoiseDim, c),
        Command::SweepDepth(c) => (ExperimentKind::SweepDepth, c),
        Command::SweepWidth(c) => (ExperimentKind::SweepWidth, c),
        Command::SweepLevels(c) => (ExperimentKind::SweepLevels, c),
        Command::VerifyTheorem(c) => (ExperimentKind::VerifyTheorem, c),
        Command::MeasuresReport(c) => (ExperimentKind::MeasuresReport, c),
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            eprintln!("obslab: config error: --jobs must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("obslab: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let overrides = Overrides { seed: common.seed, out: common.out, timing: common.timing };
    match run_from_file(&common.config, kind, &overrides) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("obslab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
