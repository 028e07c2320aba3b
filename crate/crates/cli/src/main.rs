//! `fairflow`: run scenarios, compare ordering regimes, check role
//! incentives and audit event traces.
//!
//! Exit codes: 0 success, 2 configuration error, 3 internal fault,
//! 4 verification failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Parser, Debug)]
#[command(name = "fairflow", version, about = "FairFlow block-building simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the FairFlow pipeline over a scenario for one seed.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Toggle::Off)]
        trace: Toggle,
    },
    /// Compare ordering regimes over many seeds.
    Compare {
        #[arg(long)]
        scenario: PathBuf,
        /// Run seeds 0..N; defaults to the scenario's seed list.
        #[arg(long)]
        seeds: Option<u64>,
        /// Comma-separated subset of greedy_fee, mev_builder, fairflow.
        #[arg(long)]
        regimes: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check that honest behaviour is a best response for every role.
    Equilibrium {
        /// Role-game parameter file; the shipped defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Cross-check with an exhaustive search over this many rounds.
        #[arg(long)]
        horizon: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-verify every proof, replay and conservation law in a trace.
    Verify {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("FAIRFLOW_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            trace,
        } => commands::run(&scenario, seed, &out, trace == Toggle::On),
        Command::Compare {
            scenario,
            seeds,
            regimes,
            out,
        } => commands::compare(&scenario, seeds, regimes.as_deref(), &out),
        Command::Equilibrium { params, horizon, out } => commands::equilibrium(params.as_deref(), horizon, &out),
        Command::Verify { trace } => commands::verify(&trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("fairflow: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
