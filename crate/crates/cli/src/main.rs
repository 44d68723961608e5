//! `compenkit`: generate synthetic setups, train, compensate, evaluate,
//! ablate and gradient-check from the command line.
//!
//! Exit codes: 0 success, 1 gradient check over threshold, 2 usage,
//! configuration or I/O error, 3 training diverged.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use compenkit::config::RunConfig;
use compenkit::Error;

#[derive(Debug, Parser)]
#[command(
    name = "compenkit",
    version,
    about = "Full projector compensation on a synthetic projector-camera simulator"
)]
pub struct Cli {
    /// JSON run configuration; missing keys take their defaults [default: built-in desk-scale config]
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Scene seed for `gen`, training seed for `train` and `ablate` [default: from config, 7 and 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; 1 runs everything sequentially [default: all cores]
    #[arg(long, global = true, env = "COMPENKIT_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic setup and its dataset directory
    Gen(commands::GenArgs),
    /// Train a compensation model on a dataset
    Train(commands::TrainArgs),
    /// Compensate desired images with a trained model
    Compensate(commands::CompensateArgs),
    /// Evaluate a trained model on a dataset's test split through the simulator
    Eval(commands::EvalArgs),
    /// Retrain model variants and tabulate their test metrics
    Ablate(commands::AblateArgs),
    /// Finite-difference check of every differentiable operation
    Gradcheck(commands::GradcheckArgs),
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Checks(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Checks(_) => 1,
            Failure::Lib(Error::TrainingDiverged { .. }) => 3,
            Failure::Lib(_) => 2,
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Gen(a) => commands::gen(cfg, cli.seed, a),
        Command::Train(a) => commands::train(cfg, cli.seed, a),
        Command::Compensate(a) => commands::compensate(a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Ablate(a) => commands::ablate(cfg, cli.seed, a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Checks(msg) => eprintln!("error: {msg}"),
                Failure::Lib(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}
