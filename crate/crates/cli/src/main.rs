mod artifacts;
mod commands;
mod config;
mod error;
mod pipeline;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

/// Hyper-box matching for observational causal inference.
#[derive(Debug, Parser)]
#[command(name = "ahb", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a matched group around every eligible unit and estimate effects.
    Match(commands::match_cmd::MatchArgs),
    /// Run synthetic benchmarks against baseline matching methods.
    Simulate(commands::simulate::SimulateArgs),
    /// Pick solver settings by validation loss over a settings grid.
    Tune(commands::tune::TuneArgs),
    /// Attach uncertainty intervals to per-unit effect estimates.
    Intervals(commands::intervals::IntervalsArgs),
    /// Summarize an estimates file into aggregate effects.
    Report(commands::report::ReportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Match(args) => commands::match_cmd::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Tune(args) => commands::tune::run(args),
        Command::Intervals(args) => commands::intervals::run(args),
        Command::Report(args) => commands::report::run(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
