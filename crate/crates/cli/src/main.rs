//! `gfdrift`: dataset generation, identity checks, particle flows and
//! generator training from one JSON config per run.

mod commands;
mod config;
mod manifest;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit 1: numerical abort or failed check. Exit 2: usage, config or I/O.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

fn numerical(e: &gfdrift::Error) -> bool {
    use gfdrift::Error;
    match e {
        Error::AtStep { source, .. } | Error::AtIteration { source, .. } => numerical(source),
        Error::UndefinedGradient(_) => true,
        other => other.is_numerical(),
    }
}

impl From<gfdrift::Error> for CliError {
    fn from(e: gfdrift::Error) -> Self {
        Self { code: if numerical(&e) { 1 } else { 2 }, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gfdrift", version, about = "KDE gradient flows and drifting fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; created if missing, its parent must exist.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the drifting-field identity, kernel bounds and scores; writes verify.json.
    Verify(CommonArgs),
    /// Run a particle flow; writes frame_{k}.csv, energy.csv and manifest.json.
    Flow(CommonArgs),
    /// Train a one-step generator; writes checkpoint.json, loss.csv, metrics.csv.
    Train(CommonArgs),
    /// Sample the configured dataset; writes data.csv and dataset.json.
    GenData(CommonArgs),
    /// Biased MMD² between two CSV ensembles.
    Mmd(MmdArgs),
}

#[derive(Debug, Args)]
pub struct MmdArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Gaussian bandwidth, used when no kernel is configured.
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth: f64,
    /// Points are on the unit sphere.
    #[arg(long)]
    pub sphere: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("GFDRIFT_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::usage(format!("GFDRIFT_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::usage("GFDRIFT_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Verify(a) => commands::verify(&a, argv),
        Command::Flow(a) => commands::flow(&a, argv),
        Command::Train(a) => commands::train(&a, argv),
        Command::GenData(a) => commands::gen_data(&a, argv),
        Command::Mmd(a) => commands::mmd(&a, argv),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
