use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curtailsim_cli::commands::{cmd_compare, cmd_run, cmd_validate, RunOptions};
use curtailsim_core::Seconds;

/// Trace-driven simulator for curtailment-aware federated training.
#[derive(Parser)]
#[command(name = "curtailsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and its traces without running anything.
    Validate {
        /// Scenario TOML file.
        #[arg(long)]
        scenario: PathBuf,
        /// Directory holding one `<region_id>.csv` trace per region.
        #[arg(long)]
        traces: PathBuf,
    },
    /// Simulate one scenario and write the artifact set.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        /// Output directory for events.jsonl, energy.csv, summary.csv,
        /// model.bin, and the resolved scenario echo.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed (synthetic data only; the event
        /// schedule depends solely on traces and config).
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario horizon, in seconds.
        #[arg(long)]
        horizon: Option<Seconds>,
    },
    /// Run two or more scenarios over the same traces and tabulate them.
    Compare {
        /// Scenario TOML file; repeat for each scenario.
        #[arg(long = "scenario", required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<Seconds>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { scenario, traces } => cmd_validate(&scenario, &traces),
        Command::Run { scenario, traces, out, seed, horizon } => {
            cmd_run(&RunOptions { scenario, traces, out, seed, horizon })
        }
        Command::Compare { scenarios, traces, out, seed, horizon } => {
            cmd_compare(&scenarios, &traces, &out, seed, horizon)
        }
    };
    ExitCode::from(code as u8)
}
