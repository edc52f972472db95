#![allow(dead_code)]

use std::collections::BTreeMap;

use openset_al::datagen::{make_blobs, BlobSpec};
use openset_al::harness::{run_experiment, ExperimentResult};
use openset_al::{Strategy, TrainConfig};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

/// Sample estimates of the expected entropy and the mutual information of
/// `Dir(alpha)`, each with its standard error.
pub struct MonteCarlo {
    pub expected_entropy: f64,
    pub expected_entropy_se: f64,
    pub mutual_information: f64,
    pub mutual_information_se: f64,
}

fn plogp_sum(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Draws `n` probability vectors from `Dir(alpha)` by normalizing independent
/// Gamma(alpha_c, 1) variables.
pub fn monte_carlo<R: Rng>(alpha: &[f64], n: usize, rng: &mut R) -> MonteCarlo {
    let gammas: Vec<Gamma<f64>> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let c = alpha.len();
    let mut samples = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    let mut mean = vec![0.0; c];
    while samples.len() < n {
        let g: Vec<f64> = gammas.iter().map(|d| d.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let rho: Vec<f64> = g.iter().map(|x| x / total).collect();
        entropies.push(plogp_sum(&rho));
        mean.iter_mut().zip(&rho).for_each(|(m, r)| *m += r);
        samples.push(rho);
    }
    let nf = n as f64;
    mean.iter_mut().for_each(|m| *m /= nf);

    let (h_mean, h_se) = mean_and_se(&entropies);
    // Linearizing H at the sample mean gives per-draw influence
    // -sum_c rho_c ln(mean_c) - H(rho) for the mutual-information estimate.
    let log_mean: Vec<f64> = mean.iter().map(|m| m.ln()).collect();
    let influence: Vec<f64> = samples
        .iter()
        .zip(&entropies)
        .map(|(rho, h)| -rho.iter().zip(&log_mean).map(|(r, l)| r * l).sum::<f64>() - h)
        .collect();
    let (_, mi_se) = mean_and_se(&influence);
    MonteCarlo {
        expected_entropy: h_mean,
        expected_entropy_se: h_se,
        mutual_information: plogp_sum(&mean) - h_mean,
        mutual_information_se: mi_se,
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub const BENCH_SEEDS: [u64; 3] = [0, 1, 2];
pub const BENCH_RATIO: f64 = 0.5;

/// 4 known + 4 unknown classes, dim 16, 250 examples per class.
pub fn bench_spec(seed: u64) -> BlobSpec {
    BlobSpec {
        num_known: 4,
        num_unknown: 4,
        dim: 16,
        per_class: 250,
        seed,
        ..BlobSpec::default()
    }
}

/// Defaults, 5% initial labels, b = 60, 5 cycles.
pub fn bench_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        initial_labeled_fraction: 0.05,
        query_size: 60,
        num_cycles: 5,
        ..TrainConfig::default()
    }
}

pub fn run_bench(strategy: Strategy, seed: u64) -> ExperimentResult {
    let split = make_blobs(&bench_spec(seed), BENCH_RATIO).unwrap();
    run_experiment(split, &bench_config(seed), strategy).unwrap()
}

/// Every (strategy, seed) run of the benchmark, executed in parallel.
pub fn run_bench_all(strategies: &[Strategy]) -> BTreeMap<(String, u64), ExperimentResult> {
    let jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| BENCH_SEEDS.iter().map(move |&seed| (s, seed)))
        .collect();
    jobs.par_iter()
        .map(|&(s, seed)| ((s.name().to_string(), seed), run_bench(s, seed)))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}
