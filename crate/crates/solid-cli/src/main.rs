//! `solid`: consensus portfolio optimization between a Markowitz agent and
//! an LLM decision agent, plus a monthly-rebalancing backtest harness.
//!
//! Exit codes: 0 success, 1 runtime or validation failure, 2 usage or
//! configuration error.

mod commands;
mod config;
mod providers;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "solid", version, about)]
struct Cli {
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one consensus negotiation at the latest month boundary.
    Consensus {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the monthly-rebalancing backtest over the configured strategies.
    Backtest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check the config, price data, and news coverage without running.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let path = match &cli.command {
        Command::Consensus { config } | Command::Backtest { config } | Command::Validate { config } => {
            config.clone()
        }
    };
    let run_config = match RunConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let seed = cli.seed.unwrap_or(run_config.seed);

    let outcome = match &cli.command {
        Command::Consensus { .. } => commands::cmd_consensus(&run_config, seed).map(|()| true),
        Command::Backtest { .. } => commands::cmd_backtest(&run_config, seed).map(|()| true),
        Command::Validate { .. } => commands::cmd_validate(&run_config),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
