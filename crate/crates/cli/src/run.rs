//! `run`: the strategies x ratios x seeds cross product.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{error, info};
use openset_al::harness::{run_experiment, write_metrics_csv};
use openset_al::{Strategy, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{run_stem, RunConfig};

#[derive(Debug, Serialize)]
struct RunRecord {
    strategy: Strategy,
    r: f64,
    seed: u64,
    csv: String,
    /// Training configuration after the strategy's adjustments.
    train: TrainConfig,
    final_accuracy: f64,
    /// The unlabeled pool ran out before the last cycle's full budget.
    truncated: bool,
    cycle_wall_time: Vec<f64>,
    wall_time: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a RunConfig,
    runs: Vec<RunRecord>,
    failures: Vec<String>,
}

fn execute(cfg: &RunConfig, strategy: Strategy, r: f64, seed: u64) -> Result<RunRecord> {
    let started = Instant::now();
    let split = cfg
        .data
        .load(r, seed)
        .with_context(|| format!("loading data for r={r}, seed={seed}"))?;
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let result = run_experiment(split, &train, strategy).with_context(|| run_stem(strategy, r, seed))?;
    let csv = format!("{}.csv", run_stem(strategy, r, seed));
    let path = cfg.output_dir.join(&csv);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_metrics_csv(&result.metrics, BufWriter::new(file), cfg.record_wall_time)?;
    let last = result.metrics.last().expect("initial evaluation row");
    info!("{csv}: final accuracy {:.4}", last.test_accuracy);
    Ok(RunRecord {
        strategy,
        r,
        seed,
        csv,
        train: strategy.train_config(&train),
        final_accuracy: last.test_accuracy,
        truncated: result.metrics.iter().any(|m| m.truncated),
        cycle_wall_time: result.metrics.iter().map(|m| m.wall_time).collect(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Runs every configured experiment on up to `jobs` threads and writes the
/// per-run CSVs plus `manifest.json`. Returns the number of failed runs.
pub fn cmd_run(cfg: &RunConfig, jobs: Option<usize>) -> Result<usize> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let tasks: Vec<(Strategy, f64, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| {
            cfg.openness_ratios
                .iter()
                .flat_map(move |&r| cfg.seeds.iter().map(move |&seed| (s, r, seed)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building the worker pool")?;
    info!("running {} experiments on {} threads", tasks.len(), pool.current_num_threads());
    let outcomes: Vec<Result<RunRecord>> =
        pool.install(|| tasks.par_iter().map(|&(s, r, seed)| execute(cfg, s, r, seed)).collect());

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(run) => runs.push(run),
            Err(e) => {
                error!("{e:#}");
                failures.push(format!("{e:#}"));
            }
        }
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        runs,
        failures,
    };
    let path: PathBuf = cfg.output_dir.join("manifest.json");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(manifest.failures.len())
}
