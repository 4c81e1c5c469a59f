//! `pixdiff`: forward simulation, closed-form analysis, training and
//! sampling for pixel-wise diffusion schedules.
//!
//! Exit codes: 0 on success, 1 on runtime failure (including failed
//! verdicts and gradient checks), 2 when the configuration is rejected.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analyze;
mod common;
mod forward;
mod sample;
mod train;

#[derive(Debug, Parser)]
#[command(name = "pixdiff", version, about = "Pixel-wise diffusion schedules: simulate, analyze, train, sample")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the forward chain and compare convergence with a baseline.
    Forward(forward::Args),
    /// Evaluate SNR curves, expected trajectories and their orderings.
    Analyze(analyze::Args),
    /// Train the scale estimator and the reverse noise predictor.
    Train(train::Args),
    /// Reconstruct images with the trained models.
    Sample(sample::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Forward(args) => forward::run(args),
        Command::Analyze(args) => analyze::run(args),
        Command::Train(args) => train::run(args),
        Command::Sample(args) => sample::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(common::exit_code(&err))
        }
    }
}
