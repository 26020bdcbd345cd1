use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rigid_lab::{run, Experiment, ExperimentConfig, LabError};

/// Runs one rigidity experiment from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "rigid-lab", version = rigid_lab::VERSION)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's experiment name.
    #[arg(long)]
    experiment: Option<String>,
    /// Output directory; defaults to the config's `out`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel loops.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(cli: Cli) -> Result<PathBuf, LabError> {
    let mut cfg = ExperimentConfig::from_path(&cli.config)?;
    if let Some(name) = cli.experiment {
        Experiment::parse(&name)?;
        cfg.experiment = name;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(LabError::config("threads", "need at least one thread"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| LabError::config("threads", e.to_string()))?;
    }
    let out = cli
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    run(&cfg, &out).map(|a| a.dir)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rigid-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
