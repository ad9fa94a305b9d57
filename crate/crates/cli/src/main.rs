//! `txrl`: simulate, fit, bootstrap, evaluate and recommend from the shell.

mod commands;
mod config;
mod io;
mod reports;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::io::UsageError;

#[derive(Debug, Parser)]
#[command(name = "txrl", version, about = "Offline tabular RL for treatment recommendation with bootstrap uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Simulate(commands::SimulateArgs),
    /// Fit action grid, state space, rewards and Q on a dataset.
    Fit(commands::FitArgs),
    /// Bootstrap the Q estimates and write per-state action verdicts.
    Bootstrap(commands::BootstrapArgs),
    /// Policy values, Q/mortality curve, action marginals and homogeneity.
    Evaluate(commands::EvaluateArgs),
    /// Per-timestep verdicts for the clinician actions in an episode file.
    Recommend(commands::RecommendArgs),
    /// Check a transition log and summarise it.
    Validate(commands::ValidateArgs),
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<txrl_core::Error>() {
        Some(txrl_core::Error::InvalidArgument(_)) => EXIT_USAGE,
        Some(txrl_core::Error::Numerical(_)) | Some(txrl_core::Error::NotConverged { .. }) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Recommend(a) => commands::recommend(a),
        Command::Validate(a) => commands::validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
