mod config;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use openset_al::checks::{run_checks, CheckOptions};
use openset_al::TrainConfig;

use crate::config::{ConfigError, RunConfig};

/// Open-set active learning experiments with coarse-to-fine Dirichlet selection.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every strategy x openness ratio x seed combination in a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Maximum concurrent experiments (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate run CSVs in a directory into summary tables.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the fast invariant suite.
    Check {
        /// Config whose `train` section supplies the seed and thresholds.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn check_options(path: Option<&PathBuf>) -> Result<CheckOptions, ConfigError> {
    let Some(path) = path else {
        return Ok(CheckOptions::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let train: TrainConfig = match value.get("train") {
        Some(t) => serde_json::from_value(t.clone()).map_err(|e| ConfigError(format!("train: {e}")))?,
        None => TrainConfig::default(),
    };
    train.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(CheckOptions {
        seed: train.seed,
        tau1: train.tau1,
        tau2: train.tau2,
    })
}

fn config_failure(e: ConfigError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(2)
}

fn runtime_failure(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, jobs } => {
            let cfg = match RunConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => return config_failure(e),
            };
            if jobs == Some(0) {
                return config_failure(ConfigError("--jobs: must be at least 1".into()));
            }
            match run::cmd_run(&cfg, jobs) {
                Ok(0) => ExitCode::SUCCESS,
                Ok(failed) => {
                    eprintln!("{failed} run(s) failed; see manifest.json");
                    ExitCode::from(1)
                }
                Err(e) => runtime_failure(e),
            }
        }
        Command::Report { dir } => match report::cmd_report(&dir) {
            Ok(0) => {
                eprintln!("error: no valid run CSVs in {}", dir.display());
                ExitCode::from(1)
            }
            Ok(_) => ExitCode::SUCCESS,
            Err(e) => runtime_failure(e),
        },
        Command::Check { config } => {
            let opts = match check_options(config.as_ref()) {
                Ok(o) => o,
                Err(e) => return config_failure(e),
            };
            let started = Instant::now();
            let results = run_checks(&opts);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            println!("{} checks in {:.2}s", results.len(), started.elapsed().as_secs_f64());
            let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed: {}", failed.join(", "));
                ExitCode::from(1)
            }
        }
    }
}
