//! Experiment driver for dictionary-based tomographic reconstruction.
//!
//! The `ctdict` binary is a thin wrapper over [`run`]; the pieces are public
//! so the whole pipeline can also be scripted from Rust.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod sweep;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{exit, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ctdict", version, about = "Dictionary-based CT reconstruction")]
pub struct Cli {
    /// Experiment configuration file (key=value lines).
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,

    /// Override a configuration key; may be repeated.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a nonnegative patch dictionary from the training image.
    Learn,
    /// Simulate a noisy sinogram of the exact image.
    Simulate,
    /// Reconstruct from the sinogram with the configured solver.
    Reconstruct,
    /// Compute RE (and MAE when a dictionary is available) for an image.
    Evaluate {
        /// Image to score (.pgm or .mat); defaults to the last reconstruction.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Run the pipeline over a parameter grid.
    Sweep {
        /// Grid axis KEY=V1,V2,...; repeat for more axes.
        #[arg(long = "grid", value_name = "KEY=VALUES", required = true)]
        grid: Vec<String>,
    },
    /// Write a procedural grain texture as PGM.
    Phantom {
        #[arg(long, default_value_t = 256)]
        rows: usize,
        #[arg(long, default_value_t = 256)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Executes one parsed invocation and returns its summary lines.
pub fn run(cli: &Cli) -> CliResult<commands::Outcome> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Learn => commands::cmd_learn(&cfg),
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Reconstruct => commands::cmd_reconstruct(&cfg),
        Command::Evaluate { image } => commands::cmd_evaluate(&cfg, image.as_deref()),
        Command::Sweep { grid } => sweep::cmd_sweep(&cfg, grid),
        Command::Phantom {
            rows,
            cols,
            seed,
            out,
        } => commands::cmd_phantom(*rows, *cols, *seed, out, cfg.pgm_bits),
    }
}
