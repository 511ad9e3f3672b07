//! Experiment driver for the stochastic flow solver. Exit codes: 0 success,
//! 2 configuration error, 3 numerical failure, 4 I/O error.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use snse2d_cli::config::{Overrides, RunConfig};
use snse2d_cli::{commands, AppError};

#[derive(Parser)]
#[command(
    name = "snse2d",
    version,
    about = "Monte Carlo convergence studies for a 2D stochastic flow solver"
)]
struct Cli {
    /// Experiment manifest (TOML).
    #[arg(long, global = true, default_value = "snse2d.toml")]
    config: PathBuf,
    /// Run a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run the half-open seed range A..B.
    #[arg(long, global = true, value_parser = parse_seed_range, conflicts_with = "seed")]
    seeds: Option<(u64, u64)>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread count for the Monte Carlo loops.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Mesh level (square: subdivisions per side; disk: boundary segments).
    #[arg(long, global = true)]
    level: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the integrity checks and write a pass/fail report.
    Verify,
    /// Run trajectories, saving snapshots and per-step diagnostics.
    Run,
    /// Temporal refinement study against a coupled fine-step reference.
    ConvergeTime,
    /// Spatial refinement study against a coupled fine-mesh reference.
    ConvergeSpace,
    /// Exceedance probabilities across nested (h, tau) pairs.
    Exceedance,
}

fn parse_seed_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a
        .trim()
        .parse()
        .map_err(|e| format!("bad range start: {e}"))?;
    let b: u64 = b
        .trim()
        .parse()
        .map_err(|e| format!("bad range end: {e}"))?;
    if b <= a {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok((a, b))
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        seeds: cli.seeds,
        out: cli.out,
        workers: cli.workers,
        level: cli.level,
    });
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| AppError::Config(format!("worker pool: {e}")))?;
    match cli.command {
        Command::Verify => commands::cmd_verify(&cfg),
        Command::Run => commands::cmd_run(&cfg),
        Command::ConvergeTime => commands::cmd_converge_time(&cfg),
        Command::ConvergeSpace => commands::cmd_converge_space(&cfg),
        Command::Exceedance => commands::cmd_exceedance(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("snse2d: {e}");
        std::process::exit(e.exit_code());
    }
}
