//! `ceb`: config-driven training, ρ sweeps, PGD attacks, corruption grids
//! and report rendering for conditional-entropy-bottleneck classifiers.
//!
//! Every subcommand is a pure function of its config file and seeds:
//! rerunning with the same inputs reproduces every artifact byte for byte.

mod artifacts;
mod commands;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ceb", version, about = "Bottlenecked-classifier workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from the config (first rho and seed unless given).
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Target rho; defaults to the first entry of the config's list.
        #[arg(long)]
        rho: Option<f64>,
        /// Run seed; defaults to the first entry of the config's list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; defaults to the config's output_dir, then
        /// $CEB_OUTPUT_ROOT, then ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the full rho x seed matrix and select rho* by clean accuracy.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured attack sweeps against a checkpoint.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump a corrupted copy of the test set to a dataset file.
    Corrupt {
        #[arg(long)]
        config: PathBuf,
        /// Corruption kind name, e.g. gaussian_noise.
        #[arg(long)]
        kind: String,
        /// Severity 1..=5.
        #[arg(long)]
        severity: u8,
        /// Seed for stochastic kinds; defaults to the config's first seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Destination file.
        #[arg(long)]
        dest: PathBuf,
    },
    /// Clean error plus the corruption grid (and mCE against a baseline
    /// checkpoint, when given).
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Baseline checkpoint for the mCE denominator.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render tables and plot-data files from a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Exact discrete-information demonstration on a random joint.
    Probe {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Alphabet sizes for X, Y, Z (each capped at 64).
        #[arg(long, default_value_t = 4)]
        nx: usize,
        #[arg(long, default_value_t = 3)]
        ny: usize,
        #[arg(long, default_value_t = 4)]
        nz: usize,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            rho,
            seed,
            out,
        } => commands::train(&config, rho, seed, out.as_deref()),
        Command::Sweep { config, out } => commands::sweep(&config, out.as_deref()),
        Command::Attack {
            config,
            checkpoint,
            out,
        } => commands::attack(&config, &checkpoint, out.as_deref()),
        Command::Corrupt {
            config,
            kind,
            severity,
            seed,
            dest,
        } => commands::corrupt(&config, &kind, severity, seed, &dest),
        Command::Evaluate {
            config,
            checkpoint,
            baseline,
            out,
        } => commands::evaluate(&config, &checkpoint, baseline.as_deref(), out.as_deref()),
        Command::Report { run_dir } => commands::report(&run_dir),
        Command::Probe { seed, nx, ny, nz } => commands::probe(seed, nx, ny, nz),
    }
}
