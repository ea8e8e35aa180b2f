use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;
mod report;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, schema violation, or unusable input file.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kppfind", version, about = "Discover reaction terms of graph reaction-diffusion models")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding `paths.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Simulate,
    /// Train the ensemble and distill reaction terms.
    Discover,
    /// Project every subject forward with each ensemble member.
    Project {
        /// Discovery result, overriding `paths.result`.
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Observation-horizon and constraint-mode ablation.
    Ablate,
    /// Kraichnan-Orszag system discovery.
    KoDemo,
    /// Plot-ready CSVs from a discovery result.
    Report {
        #[arg(long)]
        result: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.paths.output_dir = Some(out);
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate => commands::simulate(&config),
        Command::Discover => commands::discover(&config),
        Command::Project { result } => {
            if result.is_some() {
                config.paths.result = result;
            }
            commands::project(&config)
        }
        Command::Ablate => commands::ablate(&config),
        Command::KoDemo => commands::ko_demo(&config),
        Command::Report { result } => {
            if result.is_some() {
                config.paths.result = result;
            }
            commands::report(&config)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
