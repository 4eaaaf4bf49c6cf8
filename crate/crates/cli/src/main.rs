//! `bo4io`: generate inverse-optimization data, estimate parameters with
//! Bayesian optimization, and analyze identifiability.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use bo4io::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bo4io", version, about = "Inverse optimization by Bayesian optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent forward solves per loss evaluation.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for all outputs.
    #[arg(long, default_value = "bo4io-out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground truth and train/test observations.
    Datagen(Common),
    /// Run Bayesian optimization on the training data.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue an interrupted trace in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Profile-likelihood intervals and identifiability from a trace.
    Profile {
        #[command(flatten)]
        common: Common,
        /// Trace to analyze; `<out-dir>/trace.tsv` by default.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Aggregate traces, run summaries and profiles across runs.
    Report {
        /// Run directories or individual files.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value = "bo4io-report")]
        out_dir: PathBuf,
    },
    /// Solve one network document with an instance; `-` reads stdin.
    /// Replies in the external-oracle format.
    Solve {
        document: PathBuf,
        #[arg(long, default_value_t = 200)]
        grid_intervals: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Format { .. } | Error::Dimension { .. } => 2,
        Error::Numerical(_) | Error::Unsupported(_) | Error::Oracle(_) => 3,
        Error::Io { .. } => 4,
    }
}

fn dispatch(cli: Cli) -> bo4io::Result<()> {
    let load = |c: &Common| commands::Context::load(&c.config, &c.out_dir, c.seed, c.workers);
    let written = match cli.command {
        Command::Datagen(c) => commands::datagen(&load(&c)?)?,
        Command::Run { common, resume } => commands::run(&load(&common)?, resume)?,
        Command::Profile { common, trace } => commands::profile_cmd(&load(&common)?, trace.as_deref())?,
        Command::Report { paths, out_dir } => report::report(&paths, &out_dir)?,
        Command::Solve { document, grid_intervals } => {
            print!("{}", commands::solve(&document, grid_intervals)?);
            Vec::new()
        }
    };
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
