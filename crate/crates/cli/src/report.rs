//! `report`: final-accuracy summary and per-cycle query-precision series.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use anyhow::{Context, Result};
use log::warn;
use openset_al::harness::read_metrics_csv;
use openset_al::CycleMetrics;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PRECISION_FILE: &str = "query_precision.csv";

/// Mean and population standard deviation (divide by n).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Grouping key. Ratios are non-negative, so their bit patterns sort numerically.
type Key = (String, u64);

fn load_runs(dir: &Path) -> Result<Vec<Vec<CycleMetrics>>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("run_") && name.ends_with(".csv")
        })
        .collect();
    paths.sort();
    let mut runs = Vec::new();
    for path in paths {
        let parsed = File::open(&path)
            .map_err(openset_al::Error::from)
            .and_then(read_metrics_csv);
        match parsed {
            Ok((rows, bad)) => {
                for line in bad {
                    warn!("{}: skipping malformed row at line {line}", path.display());
                }
                if rows.is_empty() {
                    warn!("{}: no valid rows", path.display());
                } else {
                    runs.push(rows);
                }
            }
            Err(e) => warn!("{}: skipped ({e})", path.display()),
        }
    }
    Ok(runs)
}

/// Writes the summary and precision CSVs into `dir`. Returns the number of
/// valid runs aggregated.
pub fn cmd_report(dir: &Path) -> Result<usize> {
    let runs = load_runs(dir)?;
    let mut finals: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    let mut precision: BTreeMap<(Key, usize), Vec<f64>> = BTreeMap::new();
    for rows in &runs {
        let last = rows.iter().max_by_key(|m| m.cycle).expect("non-empty run");
        let key = (last.strategy.clone(), last.r.to_bits());
        finals.entry(key.clone()).or_default().push(last.test_accuracy);
        for m in rows {
            if let Some(p) = m.query_precision {
                precision.entry((key.clone(), m.cycle)).or_default().push(p);
            }
        }
    }

    let mut w = csv::Writer::from_path(dir.join(SUMMARY_FILE))?;
    w.write_record(["strategy", "r", "runs", "mean_final_accuracy", "std_final_accuracy"])?;
    for ((strategy, r), accs) in &finals {
        let (mean, std) = mean_std(accs);
        let r = f64::from_bits(*r);
        println!("{strategy:>16}  r={r:<5} n={:<3} accuracy {mean:.4} +/- {std:.4}", accs.len());
        w.write_record([
            strategy.clone(),
            r.to_string(),
            accs.len().to_string(),
            mean.to_string(),
            std.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(PRECISION_FILE))?;
    w.write_record(["strategy", "r", "cycle", "runs", "mean_query_precision", "std_query_precision"])?;
    for (((strategy, r), cycle), values) in &precision {
        let (mean, std) = mean_std(values);
        w.write_record([
            strategy.clone(),
            f64::from_bits(*r).to_string(),
            cycle.to_string(),
            values.len().to_string(),
            mean.to_string(),
            std.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(runs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std_of_three_values() {
        let (mean, std) = mean_std(&[0.8, 0.9, 1.0]);
        assert!((mean - 0.9).abs() < 1e-12);
        assert!((std - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }
}
