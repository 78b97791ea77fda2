mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Kind};

#[derive(Parser)]
#[command(name = "langevin", version, about = "Rate certificates, exact oracles and simulations for kinetic Langevin dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// χ² decay of the scalar oscillator: fitted vs closed-form rates.
    OracleOu(Common),
    /// Euler-Maruyama ensemble with moment summaries.
    Simulate(Common),
    /// Rate certificate, (s, x0) sweep and baseline comparison.
    Certify(Common),
    /// Certificate against the constant-friction baseline on a λ grid.
    Compare(Common),
    /// Lyapunov decay audit along the exact Gaussian flow.
    Audit(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults are used for missing sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for grid cells and particles.
    #[arg(long)]
    workers: Option<usize>,
}

fn execute(kind: Kind, args: Common) -> Result<()> {
    if let Some(k) = args.workers {
        rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global()?;
    }
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => toml::from_str("")?,
    };
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    cfg.kind = Some(kind);
    commands::run(kind, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::OracleOu(a) => (Kind::OracleOu, a),
        Command::Simulate(a) => (Kind::Simulate, a),
        Command::Certify(a) => (Kind::Certify, a),
        Command::Compare(a) => (Kind::Compare, a),
        Command::Audit(a) => (Kind::Audit, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
