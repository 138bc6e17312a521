//! `starlab`: experiment runner for RL-STaR dynamics on tabular reasoning chains.

mod chart;
mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "starlab",
    version,
    about = "RL-STaR dynamics on tabular reasoning chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate the closed-form update and write the exact trace.
    Exact(commands::exact::ExactArgs),
    /// Run sampled RL-STaR on the symmetric chain.
    Simulate(commands::simulate::SimulateArgs),
    /// Check every convergence claim on a parameter grid.
    Verify(commands::verify::VerifyArgs),
    /// Enumerate all trajectories and compare the filtered pair law with the update.
    Oracle(commands::oracle::OracleArgs),
    /// RL-STaR on the binary-addition chain.
    Binadd(commands::binadd::BinaddArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file, or a manifest from an earlier run. Flags override its keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for CSVs, charts and the manifest [default: results/<command>]
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for sampling and verification; 0 uses every core. Outputs do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

impl Common {
    pub fn out_dir(&self, command: &str) -> PathBuf {
        self.out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("results").join(command))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Exact(a) => commands::exact::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Verify(a) => commands::verify::run(a),
        Command::Oracle(a) => commands::oracle::run(a),
        Command::Binadd(a) => commands::binadd::run(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<starlab_core::Error>() {
                Some(starlab_core::Error::Validation(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
