//! `homog` command-line harness.

mod commands;
mod config;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use homog_core::HomogError;

use crate::config::Config;
use crate::report::{Meta, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    CellSolve,
    FiberCheck,
    AbstractCheck,
    Converge,
    Evolve,
    ScalarExample,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CellSolve => "cell-solve",
            Command::FiberCheck => "fiber-check",
            Command::AbstractCheck => "abstract-check",
            Command::Converge => "converge",
            Command::Evolve => "evolve",
            Command::ScalarExample => "scalar-example",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "homog", version, about = "Periodic parabolic homogenization experiments")]
struct Cli {
    command: Command,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; falls back to HOMOG_THREADS, then the config.
    #[arg(long, env = "HOMOG_THREADS")]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Errors that stop a run. Config and data problems exit with 2, module
/// errors that abort a whole pipeline exit with 1.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Module(HomogError),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Module(e) => write!(f, "{e}"),
        }
    }
}

impl From<HomogError> for Failure {
    fn from(e: HomogError) -> Self {
        match e {
            HomogError::InvalidInput(m) => Failure::Config(m),
            e @ HomogError::InsufficientDecades(_) => Failure::Config(e.to_string()),
            HomogError::Data(m) => Failure::Data(m),
            e => Failure::Module(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, bytes) = match Config::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("homog: {e}");
            return ExitCode::from(2);
        }
    };
    let threads = cli.threads.or(cfg.threads).filter(|&n| n > 0);
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("homog: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let seed = cli.seed.or(cfg.seed).unwrap_or(7);
    let meta = Meta::new(cli.command.name(), &bytes, seed, rayon::current_num_threads());
    let mut report = Report::new(meta, cli.out.clone());
    let run = commands::run(cli.command, &cfg, seed, &mut report);
    let code = match run {
        Ok(()) => {
            if report.all_pass() {
                0
            } else {
                1
            }
        }
        Err(Failure::Module(e)) => {
            report.fail("pipeline", f64::NAN, e.to_string());
            1
        }
        Err(e) => {
            eprintln!("homog: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = report.write_summary() {
        eprintln!("homog: {e}");
        return ExitCode::from(2);
    }
    report.print();
    ExitCode::from(code)
}
