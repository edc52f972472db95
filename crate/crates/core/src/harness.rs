//! Simulated oracle, pool bookkeeping and the multi-cycle experiment loop.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Example};
use crate::error::{Error, Result};
use crate::evidential::expected_probs;
use crate::model::{forward, ModelParams};
use crate::selection::{baseline_select, coarse_to_fine_select, score_pool, BaselineStrategy, QuerySet};
use crate::training::{train_cycle, TrainConfig, TrainingObjective};

/// A query strategy together with the training regime it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// Evidential training, discrepancy phase, coarse-to-fine selection.
    Dcfs,
    /// No discrepancy phase and no discrepancy term in the coarse filter.
    DcfsWithoutDiscrepancy,
    /// Coarse-to-fine selection on a model trained with cross-entropy.
    DcfsCrossEntropy,
    /// Softmax-style baselines, trained with cross-entropy and no discrepancy phase.
    Baseline(BaselineStrategy),
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dcfs => "dcfs",
            Strategy::DcfsWithoutDiscrepancy => "dcfs_no_sdis",
            Strategy::DcfsCrossEntropy => "dcfs_ce",
            Strategy::Baseline(b) => b.name(),
        }
    }

    /// The base configuration adjusted for this strategy's training regime.
    pub fn train_config(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Strategy::Dcfs => {}
            Strategy::DcfsWithoutDiscrepancy => cfg.discrepancy_epochs = 0,
            Strategy::DcfsCrossEntropy => cfg.objective = TrainingObjective::CrossEntropy,
            Strategy::Baseline(_) => {
                cfg.objective = TrainingObjective::CrossEntropy;
                cfg.discrepancy_epochs = 0;
            }
        }
        cfg
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcfs" => Ok(Strategy::Dcfs),
            "dcfs_no_sdis" => Ok(Strategy::DcfsWithoutDiscrepancy),
            "dcfs_ce" => Ok(Strategy::DcfsCrossEntropy),
            other => other
                .parse::<BaselineStrategy>()
                .map(Strategy::Baseline)
                .map_err(|_| Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name().to_string()
    }
}

/// Result of labeling one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleOutcome {
    pub known: usize,
    pub unknown: usize,
}

impl OracleOutcome {
    pub fn query_precision(&self) -> f64 {
        let total = self.known + self.unknown;
        if total == 0 {
            0.0
        } else {
            self.known as f64 / total as f64
        }
    }
}

/// Moves queried known-class examples into the labeled pool and discards
/// queried unknown-class ones. Every queried example consumes budget.
pub fn oracle_label(query: &QuerySet, split: &mut DatasetSplit) -> Result<OracleOutcome> {
    let position: HashMap<usize, usize> = split.unlabeled.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    let mut seen = HashSet::new();
    for &id in &query.ids {
        if !position.contains_key(&id) || !seen.insert(id) {
            return Err(Error::NotInPool(id));
        }
    }
    let mut outcome = OracleOutcome { known: 0, unknown: 0 };
    let mut remaining = Vec::with_capacity(split.unlabeled.len() - seen.len());
    let mut taken: BTreeMap<usize, Example> = BTreeMap::new();
    for e in split.unlabeled.drain(..) {
        if seen.contains(&e.id) {
            taken.insert(e.id, e);
        } else {
            remaining.push(e);
        }
    }
    split.unlabeled = remaining;
    for id in &query.ids {
        let e = taken.remove(id).expect("validated above");
        if e.label < split.num_known {
            outcome.known += 1;
            split.labeled.push(e);
        } else {
            outcome.unknown += 1;
            split.discarded.push(e.id);
        }
    }
    Ok(outcome)
}

/// Fraction of test examples whose argmax of the heads' averaged expected
/// probabilities equals the label.
pub fn evaluate_accuracy(model: &ModelParams, test: &[Example]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut correct = 0usize;
    for e in test {
        let ev = forward(model, &e.features)?;
        let p = expected_probs(&ev.a1).average(&expected_probs(&ev.a2))?;
        if p.argmax() == e.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Moves a stratified `fraction` of each known class from the unlabeled
/// pool into the labeled pool (at least one example per class).
pub fn seed_labeled_pool(split: &mut DatasetSplit, fraction: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    let mut chosen = HashSet::new();
    for class in 0..split.num_known {
        let mut ids: Vec<usize> = split.unlabeled.iter().filter(|e| e.label == class).map(|e| e.id).collect();
        if ids.is_empty() {
            return Err(Error::InvalidArgument(format!("known class {class} has no examples")));
        }
        let take = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len());
        ids.shuffle(rng);
        chosen.extend(ids.into_iter().take(take));
    }
    let (moved, kept): (Vec<Example>, Vec<Example>) = split.unlabeled.drain(..).partition(|e| chosen.contains(&e.id));
    split.unlabeled = kept;
    let n = moved.len();
    split.labeled.extend(moved);
    Ok(n)
}

/// One row of per-cycle metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: usize,
    pub strategy: String,
    pub seed: u64,
    pub r: f64,
    /// Known-class fraction of this cycle's query; absent for the initial model.
    pub query_precision: Option<f64>,
    pub test_accuracy: f64,
    pub labeled_size: usize,
    pub unlabeled_size: usize,
    pub discarded_unknown: usize,
    pub wall_time: f64,
    /// Number of examples queried this cycle.
    #[serde(skip)]
    pub queried: usize,
    /// The pool held fewer than `query_size` examples.
    #[serde(skip)]
    pub truncated: bool,
}

pub const METRICS_COLUMNS: [&str; 10] = [
    "cycle",
    "strategy",
    "seed",
    "r",
    "query_precision",
    "test_accuracy",
    "labeled_size",
    "unlabeled_size",
    "discarded_unknown",
    "wall_time",
];

/// Writes metrics as CSV. Wall time is written as zero unless
/// `include_wall_time` is set, so that reruns produce identical bytes.
pub fn write_metrics_csv<W: Write>(metrics: &[CycleMetrics], writer: W, include_wall_time: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(METRICS_COLUMNS)?;
    for m in metrics {
        let row = CycleMetrics {
            wall_time: if include_wall_time { m.wall_time } else { 0.0 },
            ..m.clone()
        };
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a metrics CSV, returning valid rows and the line numbers of rows
/// that failed to parse.
pub fn read_metrics_csv<R: Read>(reader: R) -> Result<(Vec<CycleMetrics>, Vec<u64>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(METRICS_COLUMNS) {
        return Err(Error::InvalidArgument(format!(
            "not a metrics file: header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                bad.push(e.position().map_or(0, |p| p.line()));
                continue;
            }
        };
        match record.deserialize::<CycleMetrics>(Some(&headers)) {
            Ok(m) if m.test_accuracy.is_finite() && m.query_precision.is_none_or(f64::is_finite) => rows.push(m),
            _ => bad.push(record.position().map_or(0, |p| p.line())),
        }
    }
    Ok((rows, bad))
}

/// Seed for the model trained at `cycle`.
fn model_seed(seed: u64, cycle: usize) -> u64 {
    seed.wrapping_mul(6_364_136_223_846_793_005)
        .wrapping_add(1_442_695_040_888_963_407)
        .wrapping_add(cycle as u64)
}

fn train_fresh(split: &DatasetSplit, cfg: &TrainConfig, cycle: usize) -> Result<ModelParams> {
    let mut model = ModelParams::new(split.feature_dim(), &cfg.hidden_widths, split.num_known, model_seed(cfg.seed, cycle))?;
    train_cycle(&mut model, split, cfg)?;
    Ok(model)
}

/// Selects a query from the current unlabeled pool.
pub fn select_query(
    strategy: Strategy,
    model: &ModelParams,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    b: usize,
    selection_seed: u64,
) -> Result<QuerySet> {
    match strategy {
        Strategy::Baseline(base) => baseline_select(base, &split.unlabeled, model, b, selection_seed),
        Strategy::Dcfs | Strategy::DcfsWithoutDiscrepancy | Strategy::DcfsCrossEntropy => {
            let mut scored = score_pool(&split.unlabeled, model)?;
            if strategy == Strategy::DcfsWithoutDiscrepancy {
                scored.iter_mut().for_each(|s| s.scores.s_dis = 0.0);
            }
            let (query, coarse) = coarse_to_fine_select(&scored, cfg.alpha_coef, cfg.lambda, cfg.beta_coef, b)?;
            debug!(
                "coarse stage kept {} of {} (fallback: {})",
                coarse.subset.len(),
                scored.len(),
                coarse.fallback
            );
            Ok(query)
        }
    }
}

/// Full experiment output.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub metrics: Vec<CycleMetrics>,
    pub final_split: DatasetSplit,
}

fn check_accounting(split: &DatasetSplit, total: usize) -> Result<()> {
    if split.total_examples() != total {
        return Err(Error::InvalidArgument(format!(
            "example count changed from {total} to {}",
            split.total_examples()
        )));
    }
    if let Some(e) = split.labeled.iter().find(|e| !split.is_known(e.label)) {
        return Err(Error::InvalidArgument(format!("unknown-class example {} entered the labeled pool", e.id)));
    }
    Ok(())
}

/// Runs the initial training plus `cfg.num_cycles` query cycles on `split`,
/// whose labeled pool must start empty.
pub fn run_experiment(mut split: DatasetSplit, cfg: &TrainConfig, strategy: Strategy) -> Result<ExperimentResult> {
    cfg.validate()?;
    split.validate()?;
    if !split.labeled.is_empty() {
        return Err(Error::InvalidArgument("the labeled pool must start empty".into()));
    }
    let cfg = strategy.train_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    seed_labeled_pool(&mut split, cfg.initial_labeled_fraction, &mut rng)?;
    let total = split.total_examples();

    let row = |cycle: usize, split: &DatasetSplit, precision: Option<f64>, accuracy: f64, started: Instant| CycleMetrics {
        cycle,
        strategy: strategy.name().to_string(),
        seed: cfg.seed,
        r: split.openness_ratio,
        query_precision: precision,
        test_accuracy: accuracy,
        labeled_size: split.labeled.len(),
        unlabeled_size: split.unlabeled.len(),
        discarded_unknown: split.discarded.len(),
        wall_time: started.elapsed().as_secs_f64(),
        queried: 0,
        truncated: false,
    };

    let started = Instant::now();
    let mut model = train_fresh(&split, &cfg, 0)?;
    let accuracy = evaluate_accuracy(&model, &split.test)?;
    let mut metrics = vec![row(0, &split, None, accuracy, started)];
    info!("{strategy} seed {} cycle 0: accuracy {accuracy:.4}", cfg.seed);

    for cycle in 1..=cfg.num_cycles {
        if split.unlabeled.is_empty() {
            info!("unlabeled pool exhausted before cycle {cycle}");
            if let Some(last) = metrics.last_mut() {
                last.truncated = true;
            }
            break;
        }
        let started = Instant::now();
        let b = cfg.query_size.min(split.unlabeled.len());
        let truncated = b < cfg.query_size;
        let query = select_query(strategy, &model, &split, &cfg, b, model_seed(cfg.seed ^ 0xA5A5, cycle))?;
        if query.len() != b {
            return Err(Error::InvalidArgument(format!("strategy returned {} ids for budget {b}", query.len())));
        }
        let before = split.unlabeled.len();
        let outcome = oracle_label(&query, &mut split)?;
        debug_assert_eq!(before - split.unlabeled.len(), b);
        check_accounting(&split, total)?;
        model = train_fresh(&split, &cfg, cycle)?;
        let accuracy = evaluate_accuracy(&model, &split.test)?;
        let mut m = row(cycle, &split, Some(outcome.query_precision()), accuracy, started);
        m.queried = b;
        m.truncated = truncated;
        info!(
            "{strategy} seed {} cycle {cycle}: precision {:.3}, accuracy {accuracy:.4}",
            cfg.seed,
            outcome.query_precision()
        );
        metrics.push(m);
    }
    Ok(ExperimentResult {
        metrics,
        final_split: split,
    })
}
