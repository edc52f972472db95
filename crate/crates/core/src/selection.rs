//! Query strategies: the coarse-to-fine Dirichlet selector and softmax-style
//! baselines.
//!
//! The coarse stage fits a two-component 1-D Gaussian mixture to
//! `S^dis + alpha * U^data` and keeps examples whose posterior under the
//! lower-mean (known-class) component exceeds `lambda`. The fine stage ranks
//! the survivors by `beta * U^data + U^dist` and takes the top `b`.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::evidential::{entropy, expected_probs, score_triple, CategoricalProbs, ScoreTriple};
use crate::model::{forward, ModelParams};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
}

impl GaussianComponent {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * ((2.0 * std::f64::consts::PI * self.variance).ln() + d * d / self.variance)
    }
}

/// Two-component 1-D Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: [GaussianComponent; 2],
    /// Mean log-likelihood per sample after initialization and after every EM step.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6 }
    }
}

impl GmmModel {
    /// Posterior responsibilities of both components at `x`; sums to one.
    pub fn posterior(&self, x: f64) -> [f64; 2] {
        let l0 = self.components[0].weight.ln() + self.components[0].log_density(x);
        let l1 = self.components[1].weight.ln() + self.components[1].log_density(x);
        let m = l0.max(l1);
        let e0 = (l0 - m).exp();
        let e1 = (l1 - m).exp();
        [e0 / (e0 + e1), e1 / (e0 + e1)]
    }

    /// Index of the lower-mean component.
    pub fn low_component(&self) -> usize {
        if self.components[0].mean <= self.components[1].mean {
            0
        } else {
            1
        }
    }

    fn mean_log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter()
            .map(|&x| {
                let l0 = self.components[0].weight.ln() + self.components[0].log_density(x);
                let l1 = self.components[1].weight.ln() + self.components[1].log_density(x);
                let m = l0.max(l1);
                m + ((l0 - m).exp() + (l1 - m).exp()).ln()
            })
            .sum::<f64>()
            / data.len() as f64
    }
}

/// EM for a two-component mixture, initialized by splitting the data at its
/// median with equal weights and a pooled within-half variance.
pub fn gmm_fit(scores: &[f64], opts: GmmOptions) -> Result<GmmModel> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("GMM scores must be finite".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < 2 {
        return Err(Error::Degenerate(format!(
            "GMM needs at least 2 distinct values, got {}",
            sorted.len()
        )));
    }

    let mut ordered = scores.to_vec();
    ordered.sort_by(f64::total_cmp);
    let half = ordered.len() / 2;
    let (low, high) = ordered.split_at(half.max(1));
    let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m0, m1) = (mean_of(low), mean_of(high));
    let pooled = (low.iter().map(|x| (x - m0).powi(2)).sum::<f64>()
        + high.iter().map(|x| (x - m1).powi(2)).sum::<f64>())
        / ordered.len() as f64;
    let var = pooled.max(VARIANCE_FLOOR);
    let mut model = GmmModel {
        components: [
            GaussianComponent { mean: m0, variance: var, weight: 0.5 },
            GaussianComponent { mean: m1, variance: var, weight: 0.5 },
        ],
        log_likelihood_trace: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let n = scores.len() as f64;
    let mut prev = model.mean_log_likelihood(scores);
    model.log_likelihood_trace.push(prev);

    let mut resp = vec![[0.0; 2]; scores.len()];
    for _ in 0..opts.max_iter {
        for (r, &x) in resp.iter_mut().zip(scores) {
            *r = model.posterior(x);
        }
        let mut next = model.components;
        for (k, comp) in next.iter_mut().enumerate() {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk <= f64::MIN_POSITIVE {
                return Err(Error::Degenerate(format!("GMM component {k} collapsed to zero weight")));
            }
            let mean = resp.iter().zip(scores).map(|(r, x)| r[k] * x).sum::<f64>() / nk;
            let variance = resp.iter().zip(scores).map(|(r, x)| r[k] * (x - mean).powi(2)).sum::<f64>() / nk;
            *comp = GaussianComponent {
                mean,
                variance: variance.max(VARIANCE_FLOOR),
                weight: nk / n,
            };
        }
        let total = next[0].weight + next[1].weight;
        next[0].weight /= total;
        next[1].weight = 1.0 - next[0].weight;
        model.components = next;
        model.iterations += 1;
        let ll = model.mean_log_likelihood(scores);
        model.log_likelihood_trace.push(ll);
        if (ll - prev).abs() < opts.tol {
            model.converged = true;
            break;
        }
        prev = ll;
    }
    Ok(model)
}

/// An unlabeled example's id with its selection signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: usize,
    pub scores: ScoreTriple,
}

/// Ordered, duplicate-free list of example ids to send to the oracle.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub ids: Vec<usize>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Outcome of the coarse stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseSelection {
    /// Ids passing the known-class filter, in pool order.
    pub subset: Vec<usize>,
    /// Known-class score for every pool example, pool order. This is the
    /// known-mode posterior, or a rank-based proxy on the fallback path.
    pub known_score: Vec<f64>,
    pub fallback: bool,
    pub gmm: Option<GmmModel>,
}

/// Keeps the examples whose posterior under the lower-mean mixture component
/// of `S^dis + alpha_coef * U^data` exceeds `lambda`.
///
/// If the mixture cannot be fit, falls back to the examples whose combined
/// score lies strictly below the median.
pub fn coarse_select(pool: &[ScoredExample], alpha_coef: f64, lambda: f64) -> Result<CoarseSelection> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("coarse selection on an empty pool".into()));
    }
    let combined: Vec<f64> = pool
        .iter()
        .map(|e| e.scores.s_dis + alpha_coef * e.scores.u_data)
        .collect();
    match gmm_fit(&combined, GmmOptions::default()) {
        Ok(gmm) => {
            let known = gmm.low_component();
            let known_score: Vec<f64> = combined.iter().map(|&s| gmm.posterior(s)[known]).collect();
            let subset = pool
                .iter()
                .zip(&known_score)
                .filter(|(_, &p)| p > lambda || lambda <= 0.0)
                .map(|(e, _)| e.id)
                .collect();
            Ok(CoarseSelection {
                subset,
                known_score,
                fallback: false,
                gmm: Some(gmm),
            })
        }
        Err(err @ (Error::Degenerate(_) | Error::Domain(_))) => {
            warn!("coarse selection falling back to median split: {err}");
            let mut sorted = combined.clone();
            sorted.sort_by(f64::total_cmp);
            let median = if sorted.len() % 2 == 1 {
                sorted[sorted.len() / 2]
            } else {
                0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
            };
            let n = combined.len() as f64;
            let known_score = combined
                .iter()
                .map(|s| 1.0 - sorted.partition_point(|v| v < s) as f64 / n)
                .collect();
            let subset = pool
                .iter()
                .zip(&combined)
                .filter(|(_, &s)| s < median)
                .map(|(e, _)| e.id)
                .collect();
            Ok(CoarseSelection {
                subset,
                known_score,
                fallback: true,
                gmm: None,
            })
        }
        Err(other) => Err(other),
    }
}

fn rank_desc(items: &mut [(usize, f64)]) {
    items.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
}

/// Top `b` of `sub` by `beta_coef * U^data + U^dist`, ties to the lower id.
pub fn fine_select(sub: &[ScoredExample], beta_coef: f64, b: usize) -> Result<QuerySet> {
    if b == 0 {
        return Err(Error::InvalidArgument("query size must be positive".into()));
    }
    let mut ranked: Vec<(usize, f64)> = sub
        .iter()
        .map(|e| (e.id, beta_coef * e.scores.u_data + e.scores.u_dist))
        .collect();
    rank_desc(&mut ranked);
    Ok(QuerySet {
        ids: ranked.into_iter().take(b).map(|(id, _)| id).collect(),
    })
}

/// Coarse filter, fine ranking, then top-up from the rest of the pool by
/// descending known-class score when the filtered subset is smaller than `b`.
pub fn coarse_to_fine_select(
    pool: &[ScoredExample],
    alpha_coef: f64,
    lambda: f64,
    beta_coef: f64,
    b: usize,
) -> Result<(QuerySet, CoarseSelection)> {
    if b == 0 {
        return Err(Error::InvalidArgument("query size must be positive".into()));
    }
    let coarse = coarse_select(pool, alpha_coef, lambda)?;
    let in_subset: HashSet<usize> = coarse.subset.iter().copied().collect();
    let sub: Vec<ScoredExample> = pool.iter().filter(|e| in_subset.contains(&e.id)).copied().collect();
    let mut query = fine_select(&sub, beta_coef, b)?;
    if query.len() < b {
        let mut rest: Vec<(usize, f64)> = pool
            .iter()
            .zip(&coarse.known_score)
            .filter(|(e, _)| !in_subset.contains(&e.id))
            .map(|(e, &p)| (e.id, p))
            .collect();
        rank_desc(&mut rest);
        let missing = b - query.len();
        query.ids.extend(rest.into_iter().take(missing).map(|(id, _)| id));
    }
    Ok((query, coarse))
}

/// Softmax-style baseline strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineStrategy {
    Random,
    Entropy,
    LeastConfidence,
    Margin,
}

impl BaselineStrategy {
    pub fn name(self) -> &'static str {
        match self {
            BaselineStrategy::Random => "random",
            BaselineStrategy::Entropy => "entropy",
            BaselineStrategy::LeastConfidence => "least_confidence",
            BaselineStrategy::Margin => "margin",
        }
    }

    /// Uncertainty score, higher means queried first. `None` for random.
    pub fn score(self, p: &CategoricalProbs) -> Option<f64> {
        let probs = p.probs();
        match self {
            BaselineStrategy::Random => None,
            BaselineStrategy::Entropy => Some(entropy(p)),
            BaselineStrategy::LeastConfidence => Some(1.0 - probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            BaselineStrategy::Margin => {
                let mut top = [f64::NEG_INFINITY; 2];
                for &v in probs {
                    if v > top[0] {
                        top = [v, top[0]];
                    } else if v > top[1] {
                        top[1] = v;
                    }
                }
                Some(-(top[0] - top[1]))
            }
        }
    }
}

impl fmt::Display for BaselineStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BaselineStrategy::Random),
            "entropy" => Ok(BaselineStrategy::Entropy),
            "least_confidence" => Ok(BaselineStrategy::LeastConfidence),
            "margin" => Ok(BaselineStrategy::Margin),
            other => Err(Error::InvalidArgument(format!("unknown baseline strategy '{other}'"))),
        }
    }
}

/// Expected probabilities of the heads' averaged evidence.
pub fn averaged_probs(model: &ModelParams, x: &[f64]) -> Result<CategoricalProbs> {
    let e = forward(model, x)?;
    Ok(expected_probs(&e.a1.average(&e.a2)?))
}

pub fn baseline_select(
    strategy: BaselineStrategy,
    pool: &[Example],
    model: &ModelParams,
    b: usize,
    seed: u64,
) -> Result<QuerySet> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("baseline selection on an empty pool".into()));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("query size must be positive".into()));
    }
    if strategy == BaselineStrategy::Random {
        let mut ids: Vec<usize> = pool.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        ids.truncate(b);
        return Ok(QuerySet { ids });
    }
    let mut ranked = pool
        .iter()
        .map(|e| {
            let p = averaged_probs(model, &e.features)?;
            Ok((e.id, strategy.score(&p).expect("non-random strategy")))
        })
        .collect::<Result<Vec<_>>>()?;
    rank_desc(&mut ranked);
    Ok(QuerySet {
        ids: ranked.into_iter().take(b).map(|(id, _)| id).collect(),
    })
}

/// Per-example uncertainties and discrepancy score under `model`.
pub fn score_pool(pool: &[Example], model: &ModelParams) -> Result<Vec<ScoredExample>> {
    pool.iter()
        .map(|e| {
            let ev = forward(model, &e.features)?;
            Ok(ScoredExample {
                id: e.id,
                scores: score_triple(&ev.a1, &ev.a2)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn scored(id: usize, u_data: f64, u_dist: f64, s_dis: f64) -> ScoredExample {
        ScoredExample {
            id,
            scores: ScoreTriple { u_data, u_dist, s_dis },
        }
    }

    fn mixture(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(0.0, 0.1).unwrap();
        let b = Normal::new(5.0, 0.1).unwrap();
        (0..n)
            .map(|_| if rng.random_bool(0.5) { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect()
    }

    #[test]
    fn gmm_recovers_separated_means() {
        let data = mixture(500, 3);
        let gmm = gmm_fit(&data, GmmOptions::default()).unwrap();
        let mut means = [gmm.components[0].mean, gmm.components[1].mean];
        means.sort_by(f64::total_cmp);
        assert!(means[0].abs() < 0.05 && (means[1] - 5.0).abs() < 0.05, "{means:?}");
        assert!(gmm.log_likelihood_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!((gmm.components[0].weight + gmm.components[1].weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gmm_posteriors_normalize() {
        let data: Vec<f64> = (-20..=20).map(|i| i as f64 / 4.0).collect();
        let gmm = gmm_fit(&data, GmmOptions::default()).unwrap();
        for &x in &data {
            let p = gmm.posterior(x);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gmm_rejects_degenerate_input() {
        assert!(matches!(gmm_fit(&[1.0; 10], GmmOptions::default()), Err(Error::Degenerate(_))));
        assert!(matches!(gmm_fit(&[], GmmOptions::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn coarse_identical_scores_fall_back() {
        let pool: Vec<_> = (0..6).map(|i| scored(i, 0.3, 0.1, 1.0)).collect();
        let c = coarse_select(&pool, 1.0, 0.5).unwrap();
        assert!(c.fallback);
        assert!(c.subset.is_empty());
        let (q, _) = coarse_to_fine_select(&pool, 1.0, 0.5, 0.5, 3).unwrap();
        assert_eq!(q.ids, vec![0, 1, 2]);
    }

    #[test]
    fn coarse_keeps_low_cluster() {
        let data = mixture(200, 5);
        let pool: Vec<_> = data.iter().enumerate().map(|(i, &s)| scored(i, 0.0, 0.0, s.abs() * 2.0)).collect();
        let c = coarse_select(&pool, 1.0, 0.5).unwrap();
        let expected: Vec<usize> = data.iter().enumerate().filter(|(_, s)| s.abs() < 2.5).map(|(i, _)| i).collect();
        assert_eq!(c.subset, expected);
        assert!(!c.fallback);
    }

    #[test]
    fn coarse_lambda_zero_keeps_everything() {
        let pool: Vec<_> = (0..50).map(|i| scored(i, (i % 7) as f64 * 0.1, 0.0, (i % 3) as f64 * 4.0)).collect();
        let c = coarse_select(&pool, 1.0, 0.0).unwrap();
        assert_eq!(c.subset.len(), 50);
    }

    #[test]
    fn fine_select_examples() {
        let sub = vec![scored(4, 0.0, 3.0, 0.0), scored(2, 0.0, 1.0, 0.0)];
        assert_eq!(fine_select(&sub, 0.5, 1).unwrap().ids, vec![4]);
        assert_eq!(fine_select(&sub, 0.5, 5).unwrap().ids, vec![4, 2]);
        assert!(fine_select(&sub, 0.5, 0).is_err());
        let tied = vec![scored(9, 1.0, 1.0, 0.0), scored(3, 1.0, 1.0, 0.0)];
        assert_eq!(fine_select(&tied, 0.5, 1).unwrap().ids, vec![3]);
    }

    #[test]
    fn baseline_names_round_trip() {
        for s in [
            BaselineStrategy::Random,
            BaselineStrategy::Entropy,
            BaselineStrategy::LeastConfidence,
            BaselineStrategy::Margin,
        ] {
            assert_eq!(s.name().parse::<BaselineStrategy>().unwrap(), s);
        }
        assert!("badge".parse::<BaselineStrategy>().is_err());
    }

    #[test]
    fn baseline_scores() {
        let uniform = CategoricalProbs::new(vec![0.25; 4]).unwrap();
        let certain = CategoricalProbs::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        for s in [BaselineStrategy::Entropy, BaselineStrategy::LeastConfidence, BaselineStrategy::Margin] {
            assert!(s.score(&uniform).unwrap() > s.score(&certain).unwrap());
        }
        assert_eq!(BaselineStrategy::LeastConfidence.score(&certain), Some(0.0));
        assert_eq!(BaselineStrategy::Margin.score(&uniform), Some(0.0));
    }
}
