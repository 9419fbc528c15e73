//! Command-line runner: simulate scenarios, verify nested-CVaR bounds,
//! and sweep confidence levels, emitting plot-ready CSV and JSON reports.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cvarshield",
    version,
    about = "Risk-averse CVaR barrier-function safety filtering for stochastic linear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the synthesis method (epigraph | dccp).
    #[arg(long)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo batch and write traces, summary, and manifest.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the nested-CVaR induction bound over the exhaustive
    /// disturbance tree and print one row per time step.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Verification horizon (|W|^horizon must stay within budget).
        #[arg(long)]
        horizon: usize,
    },
    /// Re-run the scenario at several confidence levels and write a
    /// plot-ready CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated confidence levels in (0, 1).
        #[arg(long)]
        betas: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate { common, out } => {
            commands::cmd_simulate(&common.config, &out, common.seed, common.method.as_deref())
        }
        Command::Verify { common, horizon } => {
            commands::cmd_verify(&common.config, horizon, common.seed, common.method.as_deref())
        }
        Command::Sweep {
            common,
            betas,
            out,
        } => commands::cmd_sweep(
            &common.config,
            &betas,
            &out,
            common.seed,
            common.method.as_deref(),
        ),
    };
    ExitCode::from(code)
}
