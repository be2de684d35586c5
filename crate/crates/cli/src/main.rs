//! `gampi`: simulate, fit, evaluate and benchmark causal graphs with
//! instruments and hidden confounders.
//!
//! Exit codes: 0 ok, 2 configuration, 3 i/o, 4 peeling stalled, 5 node fit
//! failures.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gampi::{Method, Stage, TuningMethod};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "gampi", version, about = "Causal discovery with instruments and hidden confounders")]
struct Cli {
    /// Worker threads for node fits and replicates.
    #[arg(long, global = true, env = "GAMPI_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dri,
    Dps,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum TuningArg {
    Ebic,
    Cv,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Fidelity,
    Peel,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and its true graph from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the graph from a dataset CSV (columns y1..yp, x1..xq).
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// One family for all responses, or a comma-separated list
        /// (gaussian, binary, count).
        #[arg(long)]
        families: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long, value_enum)]
        tuning: Option<TuningArg>,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare an estimate JSON against a truth JSON.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Report file; `.json` gives JSON, anything else CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replicate simulate, fit and eval; print a mean (SE) table.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-replicate metrics CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, out, seed } => commands::simulate_cmd(commands::SimulateArgs { config, out, seed }),
        Command::Fit {
            data,
            families,
            config,
            method,
            tuning,
            stage,
            out,
        } => commands::fit_cmd(commands::FitArgs {
            data,
            families,
            config,
            method: method.map(|m| match m {
                MethodArg::Dri => Method::Dri,
                MethodArg::Dps => Method::Dps,
                MethodArg::None => Method::NoDeconf,
            }),
            tuning: tuning.map(|t| match t {
                TuningArg::Ebic => TuningMethod::Ebic,
                TuningArg::Cv => TuningMethod::Cv,
            }),
            stage: stage.map(|s| match s {
                StageArg::Fidelity => Stage::Fidelity,
                StageArg::Peel => Stage::Peel,
                StageArg::Full => Stage::Full,
            }),
            out,
        }),
        Command::Eval { estimate, truth, out } => commands::eval_cmd(&estimate, &truth, out.as_deref()),
        Command::Bench { config, reps, seed, out } => commands::bench_cmd(commands::BenchArgs { config, reps, seed, out }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gampi: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
