use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use penning_cli::commands::{run, Command, RunOptions};

/// Micro-Penning trap array simulator.
#[derive(Debug, Parser)]
#[command(name = "penning", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recompute and compare against the manifest in the output directory instead of writing.
    #[arg(long, global = true)]
    verify: bool,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Equilibrium, normal modes and invariance checks.
    Modes,
    /// Stochastic Doppler-cooling simulation.
    Cool,
    /// Effective Ising couplings and range fits.
    Spinspin,
    /// Two-qubit gate fidelity scan.
    Gate,
    /// Check the configuration without running anything.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let command = match cli.command {
        Sub::Modes => Command::Modes,
        Sub::Cool => Command::Cool,
        Sub::Spinspin => Command::SpinSpin,
        Sub::Gate => Command::Gate,
        Sub::Validate => Command::Validate,
    };
    let opts = RunOptions { config, out: cli.out, seed: cli.seed, verify: cli.verify };
    match run(command, &opts) {
        Ok(notes) => {
            for n in notes {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
