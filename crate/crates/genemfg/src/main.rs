use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "genemfg",
    version,
    about = "Coupled two-population mean-field game solver with a shared resource constraint"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one fixed-point solve and write the solution tables.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the configured initial-probability range, one solve per value.
    Scan {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check model assumptions and derivative consistency.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cross-check the density solver against a particle simulation.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        particles: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve { config, out } => genemfg::cli::run_solve(&config, out),
        Command::Scan { config } => genemfg::cli::run_scan(&config),
        Command::Validate { config } => genemfg::cli::run_validate(&config),
        Command::Oracle {
            config,
            particles,
            seed,
        } => genemfg::cli::run_oracle(&config, particles, seed),
    };
    ExitCode::from(code as u8)
}
