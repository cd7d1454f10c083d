//! `nsextremes`: simulate synthetic directional extremes, fit non-stationary
//! generalised Pareto models, simulate return values and compare them with
//! the truth.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure,
//! 4 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nsextremes::Error;

#[derive(Parser, Debug)]
#[command(name = "nsextremes", version, about = "Non-stationary peaks-over-threshold inference")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a sample from a synthetic case.
    Simulate(commands::SimulateArgs),
    /// Fit a model by penalised likelihood or MCMC.
    Fit(commands::FitArgs),
    /// Simulate return-value distributions from a fitted run or the truth.
    ReturnValues(commands::ReturnArgs),
    /// Compare model return-value distributions with the truth.
    Compare(commands::CompareArgs),
    /// Effective sample sizes of a fitted run.
    Ess(commands::EssArgs),
    /// Run a comparison study grid.
    Study,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Domain(_) => 2,
        Error::Numeric(_) | Error::Contract(_) => 3,
        Error::Io { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&cli.common, &a),
        Command::Fit(a) => commands::fit(&cli.common, &a),
        Command::ReturnValues(a) => commands::return_values(&cli.common, &a),
        Command::Compare(a) => commands::compare(&cli.common, &a),
        Command::Ess(a) => commands::ess(&cli.common, &a),
        Command::Study => commands::study(&cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
