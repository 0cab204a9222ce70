mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Runs nonlocal Cahn-Hilliard-Navier-Stokes experiments.
///
/// Exit status: 0 on success, 2 when the configuration or inputs are invalid,
/// 3 when the computation fails numerically (or a `check` fails).
#[derive(Debug, Parser)]
#[command(name = "chns", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory, overriding `output.directory`.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Run seed, overriding `seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Integrate the uncontrolled flow and write diagnostics and snapshots.
    Simulate,
    /// Solve the distributed optimal-control problem from a zero control.
    Optimize,
    /// Run an initial-velocity twin experiment.
    Assimilate,
    /// Run the invariant suite.
    Check,
    /// Taylor test of the reduced gradient.
    GradientTest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config <PATH> is required");
        return ExitCode::from(2);
    };
    let opts = run::Options {
        config,
        output: cli.output,
        seed: cli.seed,
    };
    let cmd = match cli.command {
        Command::Simulate => run::Task::Simulate,
        Command::Optimize => run::Task::Optimize,
        Command::Assimilate => run::Task::Assimilate,
        Command::Check => run::Task::Check,
        Command::GradientTest => run::Task::GradientTest,
    };
    match run::run(cmd, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
