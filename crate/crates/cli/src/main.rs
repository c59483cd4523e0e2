//! `featreplay` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage or config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// An error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "featreplay",
    version,
    about = "Feature-replay continual-learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing report files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its reports.
    Run(RunArgs),
    /// Run one experiment per value of a declared sweep axis.
    Sweep {
        #[command(flatten)]
        args: RunArgs,
        /// Which `[[sweep]]` axis to run when several are declared.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Compare every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Deliberately break one backward pass (recon-sign, ewc-sign, meta-sign).
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Verify record sizes, budget, capacities and round trip of a bank file,
    /// or of a synthetic saturated bank when no file is given.
    Memcheck {
        bank: Option<PathBuf>,
        /// Bank limits come from this config's experiment table.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print a bank file as text.
    Dump { bank: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(a.config.as_deref(), a.out, a.seed, a.force),
        Command::Sweep { args: a, axis } => {
            commands::sweep(a.config.as_deref(), axis.as_deref(), a.out, a.seed, a.force)
        }
        Command::Gradcheck { seed, inject_fault } => commands::gradcheck(seed, inject_fault.as_deref()),
        Command::Memcheck { bank, config } => commands::memcheck(bank.as_deref(), config.as_deref()),
        Command::Dump { bank } => commands::dump(&bank),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
