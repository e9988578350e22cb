mod commands;
mod config;
mod output;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Overrides, RunConfig};

/// Worker threads for ensembles and size sweeps; all cores when unset.
const WORKERS_ENV: &str = "BTCM_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] btc_metrology::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Library(e) if e.is_config_error() => 2,
            _ => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "btcm", version, about = "Frequency-estimation limits for a monitored boundary time crystal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generator eigenvalues, optionally with correlation amplitudes.
    Spectrum(Overrides),
    /// Global QFI rate against the closed form over a grid of sizes.
    GlobalRate(Overrides),
    /// Signal Fisher information from simulated detection records.
    Monitoring(Overrides),
    /// Collective advantage against the single-spin baseline.
    Advantage(Overrides),
    /// Finite-size exponents near the critical point.
    Scaling(Overrides),
    /// Consistency of the rate under the rescaled dissipation convention.
    RescaleCheck(Overrides),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::GlobalRate(_) => "global-rate",
            Command::Monitoring(_) => "monitoring",
            Command::Advantage(_) => "advantage",
            Command::Scaling(_) => "scaling",
            Command::RescaleCheck(_) => "rescale-check",
        }
    }
}

fn defaults(command: &Command) -> RunConfig {
    let base = RunConfig::default();
    match command {
        Command::Spectrum(_) => RunConfig { n_spins: vec![2], ..base },
        Command::GlobalRate(_) => RunConfig { n_spins: vec![10, 20, 30, 40, 50], ..base },
        Command::Monitoring(_) => base,
        Command::Advantage(_) => RunConfig {
            n_spins: vec![2, 4],
            eta: vec![0.25, 0.5, 0.9],
            ..base
        },
        Command::Scaling(_) => RunConfig {
            n_spins: vec![8, 12, 16, 24, 32, 48],
            omega: 1.0,
            ..base
        },
        Command::RescaleCheck(_) => RunConfig { n_spins: vec![2, 4, 8], ..base },
    }
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let workers: usize = value
        .parse()
        .ok()
        .filter(|&w| w > 0)
        .ok_or_else(|| CliError::Config(format!("invalid `{WORKERS_ENV}`: expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

fn run(cli: Cli) -> Result<output::RunManifest, CliError> {
    configure_workers()?;
    let started = Instant::now();
    let command = &cli.command;
    let overrides = match command {
        Command::Spectrum(o)
        | Command::GlobalRate(o)
        | Command::Monitoring(o)
        | Command::Advantage(o)
        | Command::Scaling(o)
        | Command::RescaleCheck(o) => o,
    };
    let cfg = overrides.resolve(defaults(command))?;
    let (tables, failures) = match command {
        Command::Spectrum(_) => commands::spectrum(&cfg)?,
        Command::GlobalRate(_) => commands::global_rate(&cfg)?,
        Command::Monitoring(_) => commands::monitoring(&cfg)?,
        Command::Advantage(_) => commands::advantage(&cfg)?,
        Command::Scaling(_) => commands::scaling(&cfg)?,
        Command::RescaleCheck(_) => commands::rescale_check(&cfg)?,
    };
    output::persist(command.name(), &cfg, &tables, &failures, started)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            for f in &manifest.failures {
                eprintln!("partial failure: {f}");
            }
            println!(
                "{}: wrote {} file(s), {:.1} s",
                manifest.command,
                manifest.outputs.len() + 1,
                manifest.wall_clock_seconds
            );
            ExitCode::from(if manifest.failures.is_empty() { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
