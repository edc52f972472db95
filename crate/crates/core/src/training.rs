//! Losses, optimizer and the per-cycle training schedule.
//!
//! Labeled data is fit with the evidential loss (marginal-likelihood NLL plus
//! a KL term pulling non-target evidence toward the flat Dirichlet). The
//! unlabeled pool is then used for alternating discrepancy passes: the
//! backbone is tuned to make the heads agree, and the heads are tuned to make
//! them disagree, each example weighted by a sigmoid of its uncertainty.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Example};
use crate::error::{Error, Result};
use crate::evidential::{
    data_uncertainty, distribution_uncertainty, jsd_slices, kl_dirichlet_to_uniform, DirichletParams,
    EVIDENCE_LOGIT_BOUND,
};
use crate::model::{clamp_mask, ModelParams, Network, ParamGroup};
use crate::special::trigamma_unchecked;

/// Loss used on the labeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingObjective {
    /// NLL of the Dirichlet marginal likelihood plus the KL regularizer.
    Evidential,
    /// Softmax cross-entropy. With exponential evidence this is exactly the
    /// NLL term alone.
    CrossEntropy,
}

/// How the two discrepancy phases interleave over the unlabeled pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternation {
    /// One full epoch of agreement, then one of disagreement, and so on.
    PerEpoch,
    /// Every mini-batch takes an agreement step followed by a disagreement step.
    PerBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub lambda: f64,
    pub alpha_coef: f64,
    pub beta_coef: f64,
    pub query_size: usize,
    pub num_cycles: usize,
    pub initial_labeled_fraction: f64,
    pub seed: u64,
    pub discrepancy_epochs: usize,
    pub alternation: Alternation,
    pub hidden_widths: Vec<usize>,
    pub objective: TrainingObjective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 100,
            lr_milestones: vec![60, 80],
            lr_decay: 10.0,
            tau1: 7.0,
            tau2: -5.0,
            lambda: 0.5,
            alpha_coef: 1.0,
            beta_coef: 0.5,
            query_size: 60,
            num_cycles: 6,
            initial_labeled_fraction: 0.05,
            seed: 0,
            discrepancy_epochs: 10,
            alternation: Alternation::PerEpoch,
            hidden_widths: vec![64, 64],
            objective: TrainingObjective::Evidential,
        }
    }
}

impl TrainConfig {
    /// Field-level validation; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::InvalidArgument(format!("train.{field}: {why}")));
        for (name, v) in [("lr", self.lr), ("lr_decay", self.lr_decay)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, format!("must be non-negative, got {v}"));
            }
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad("lambda", format!("must lie in (0, 1), got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.query_size == 0 {
            return bad("query_size", "must be positive".into());
        }
        if let Some(m) = self.lr_milestones.iter().find(|&&m| m >= self.epochs) {
            return bad("lr_milestones", format!("milestone {m} is not below epochs {}", self.epochs));
        }
        if !(self.initial_labeled_fraction > 0.0 && self.initial_labeled_fraction < 1.0) {
            return bad(
                "initial_labeled_fraction",
                format!("must lie in (0, 1), got {}", self.initial_labeled_fraction),
            );
        }
        if self.hidden_widths.contains(&0) {
            return bad("hidden_widths", "widths must be positive".into());
        }
        for (name, v) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("alpha_coef", self.alpha_coef),
            ("beta_coef", self.beta_coef),
        ] {
            if !v.is_finite() {
                return bad(name, format!("must be finite, got {v}"));
            }
        }
        Ok(())
    }

    /// Step size at `epoch`: the base rate divided by `lr_decay` once per
    /// milestone already reached.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr / self.lr_decay.powi(passed as i32)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn evidence(logits: &[f64]) -> Vec<f64> {
    logits
        .iter()
        .map(|z| z.clamp(-EVIDENCE_LOGIT_BOUND, EVIDENCE_LOGIT_BOUND).exp())
        .collect()
}

fn normalize(alpha: &[f64]) -> Vec<f64> {
    let s: f64 = alpha.iter().sum();
    alpha.iter().map(|a| a / s).collect()
}

/// Per-head evidential loss and its gradient with respect to the logits.
fn edl_head_loss(logits: &[f64], label: usize, objective: TrainingObjective) -> (f64, Vec<f64>) {
    let alpha = evidence(logits);
    let strength: f64 = alpha.iter().sum();
    let nll = strength.ln() - alpha[label].ln();
    let mut grad: Vec<f64> = alpha
        .iter()
        .enumerate()
        .map(|(c, a)| a / strength - if c == label { 1.0 } else { 0.0 })
        .collect();
    let mut loss = nll;
    if objective == TrainingObjective::Evidential {
        let mut masked = alpha.clone();
        masked[label] = 1.0;
        let kl = kl_dirichlet_to_uniform(&DirichletParams::new(masked.clone()).expect("positive evidence"));
        let masked_strength: f64 = masked.iter().sum();
        let excess: f64 = masked.iter().map(|a| a - 1.0).sum();
        let shared = trigamma_unchecked(masked_strength) * excess;
        for (c, g) in grad.iter_mut().enumerate() {
            if c == label {
                continue;
            }
            let d_masked = (masked[c] - 1.0) * trigamma_unchecked(masked[c]) - shared;
            *g += d_masked * alpha[c];
        }
        loss += kl;
    }
    for (g, z) in grad.iter_mut().zip(logits) {
        *g *= clamp_mask(*z);
    }
    (loss, grad)
}

/// Evidential loss on labeled examples, averaged over the batch and both
/// heads, with gradients for every parameter.
pub fn edl_loss(net: &Network, batch: &[&Example], objective: TrainingObjective) -> Result<(f64, Network)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty labeled batch".into()));
    }
    let classes = net.num_classes();
    let scale = 1.0 / (2.0 * batch.len() as f64);
    let mut grads = net.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        if ex.label >= classes {
            return Err(Error::InvalidArgument(format!(
                "example {} has no known-class label (label {} with {classes} known classes)",
                ex.id, ex.label
            )));
        }
        let cache = net.forward_cached(&ex.features)?;
        let (l1, mut g1) = edl_head_loss(&cache.logits[0], ex.label, objective);
        let (l2, mut g2) = edl_head_loss(&cache.logits[1], ex.label, objective);
        total += scale * (l1 + l2);
        g1.iter_mut().chain(g2.iter_mut()).for_each(|g| *g *= scale);
        net.backward(&cache, [&g1, &g2], ParamGroup::All, &mut grads);
    }
    Ok((total, grads))
}

/// Which discrepancy phase a weight vector is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscrepancyPhase {
    /// Tune the backbone so the heads agree; weights favor low data uncertainty.
    Close,
    /// Tune the heads so they disagree; weights favor high distribution uncertainty.
    Dis,
}

/// Per-example weights for a discrepancy phase. Uncertainties come from the
/// element-wise mean of the heads' evidence and are treated as constants.
pub fn discrepancy_weights(
    net: &Network,
    batch: &[&Example],
    phase: DiscrepancyPhase,
    tau1: f64,
    tau2: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty unlabeled batch".into()));
    }
    let n = batch.len() as f64;
    batch
        .iter()
        .map(|ex| {
            let cache = net.forward_cached(&ex.features)?;
            let avg: Vec<f64> = evidence(&cache.logits[0])
                .iter()
                .zip(evidence(&cache.logits[1]))
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let avg = DirichletParams::new(avg)?;
            Ok(match phase {
                DiscrepancyPhase::Close => (1.0 - sigmoid(data_uncertainty(&avg) - tau1)) / n,
                DiscrepancyPhase::Dis => sigmoid(distribution_uncertainty(&avg) - tau2) / n,
            })
        })
        .collect()
}

/// Head JSD (bits) and its gradient with respect to each head's logits.
fn jsd_with_logit_grads(logits: &[Vec<f64>; 2]) -> (f64, [Vec<f64>; 2]) {
    let p = normalize(&evidence(&logits[0]));
    let q = normalize(&evidence(&logits[1]));
    let value = jsd_slices(&p, &q);
    let inv_ln2 = std::f64::consts::LOG2_E;
    let mut dp = Vec::with_capacity(p.len());
    let mut dq = Vec::with_capacity(q.len());
    for (&a, &b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        dp.push(0.5 * (a / m).ln() * inv_ln2);
        dq.push(0.5 * (b / m).ln() * inv_ln2);
    }
    let through_softmax = |probs: &[f64], dprob: &[f64], z: &[f64]| -> Vec<f64> {
        let mean: f64 = probs.iter().zip(dprob).map(|(p, d)| p * d).sum();
        probs
            .iter()
            .zip(dprob)
            .zip(z)
            .map(|((p, d), z)| p * (d - mean) * clamp_mask(*z))
            .collect()
    };
    let g1 = through_softmax(&p, &dp, &logits[0]);
    let g2 = through_softmax(&q, &dq, &logits[1]);
    (value, [g1, g2])
}

/// Agreement loss `sum_i w_i JSD(p1_i, p2_i)` with fixed weights; gradients
/// are accumulated for the backbone only.
pub fn close_loss_weighted(net: &Network, batch: &[&Example], weights: &[f64]) -> Result<(f64, Network)> {
    discrepancy_loss(net, batch, weights, DiscrepancyPhase::Close)
}

/// Disagreement loss `sum_i w_i (1 - JSD(p1_i, p2_i))` with fixed weights;
/// gradients are accumulated for the heads only.
pub fn dis_loss_weighted(net: &Network, batch: &[&Example], weights: &[f64]) -> Result<(f64, Network)> {
    discrepancy_loss(net, batch, weights, DiscrepancyPhase::Dis)
}

fn discrepancy_loss(
    net: &Network,
    batch: &[&Example],
    weights: &[f64],
    phase: DiscrepancyPhase,
) -> Result<(f64, Network)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty unlabeled batch".into()));
    }
    if weights.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            actual: weights.len(),
        });
    }
    let mut grads = net.zeros_like();
    let mut total = 0.0;
    for (ex, &w) in batch.iter().zip(weights) {
        let cache = net.forward_cached(&ex.features)?;
        let (value, [mut g1, mut g2]) = jsd_with_logit_grads(&cache.logits);
        let (term, sign, group) = match phase {
            DiscrepancyPhase::Close => (value, 1.0, ParamGroup::Backbone),
            DiscrepancyPhase::Dis => (1.0 - value, -1.0, ParamGroup::Heads),
        };
        total += w * term;
        g1.iter_mut().chain(g2.iter_mut()).for_each(|g| *g *= sign * w);
        net.backward(&cache, [&g1, &g2], group, &mut grads);
    }
    Ok((total, grads))
}

pub fn close_loss(net: &Network, batch: &[&Example], cfg: &TrainConfig) -> Result<(f64, Network)> {
    let w = discrepancy_weights(net, batch, DiscrepancyPhase::Close, cfg.tau1, cfg.tau2)?;
    close_loss_weighted(net, batch, &w)
}

pub fn dis_loss(net: &Network, batch: &[&Example], cfg: &TrainConfig) -> Result<(f64, Network)> {
    let w = discrepancy_weights(net, batch, DiscrepancyPhase::Dis, cfg.tau1, cfg.tau2)?;
    dis_loss_weighted(net, batch, &w)
}

/// Momentum SGD with decoupled-into-gradient weight decay, restricted to `group`.
///
/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr(epoch) * v`
pub fn sgd_step(m: &mut ModelParams, grads: &Network, epoch: usize, cfg: &TrainConfig, group: ParamGroup) -> Result<()> {
    for (name, g_group, tensor) in grads.tensors() {
        if group != ParamGroup::All && group != g_group {
            continue;
        }
        if let Some((index, value)) = tensor.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: name,
                index,
                value: *value,
            });
        }
    }
    let lr = cfg.lr_at(epoch);
    let grad_tensors = grads.tensors();
    let params = m.network.tensors_mut();
    let velocity = m.velocity.tensors_mut();
    for (((p_group, param), (_, vel)), (_, _, grad)) in params.into_iter().zip(velocity).zip(grad_tensors) {
        if group != ParamGroup::All && group != p_group {
            continue;
        }
        for ((p, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(grad.iter()) {
            *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}

fn batches<'a>(pool: &'a [Example], batch_size: usize, m: &mut ModelParams) -> Vec<Vec<&'a Example>> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut m.rng);
    order
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|&i| &pool[i]).collect())
        .collect()
}

fn discrepancy_step(m: &mut ModelParams, batch: &[&Example], phase: DiscrepancyPhase, epoch: usize, cfg: &TrainConfig) -> Result<()> {
    let (_, grads) = match phase {
        DiscrepancyPhase::Close => close_loss(&m.network, batch, cfg)?,
        DiscrepancyPhase::Dis => dis_loss(&m.network, batch, cfg)?,
    };
    let group = match phase {
        DiscrepancyPhase::Close => ParamGroup::Backbone,
        DiscrepancyPhase::Dis => ParamGroup::Heads,
    };
    sgd_step(m, &grads, epoch, cfg, group)
}

/// Evidential training on the labeled pool followed by the alternating
/// discrepancy phase on the unlabeled pool.
pub fn train_cycle(m: &mut ModelParams, split: &DatasetSplit, cfg: &TrainConfig) -> Result<()> {
    if split.labeled.is_empty() {
        return Err(Error::InvalidArgument("labeled pool is empty".into()));
    }
    let batch_size = cfg.batch_size.min(split.labeled.len());
    m.reset_momentum();
    for epoch in 0..cfg.epochs {
        for batch in batches(&split.labeled, batch_size, m) {
            let (_, grads) = edl_loss(&m.network, &batch, cfg.objective)?;
            sgd_step(m, &grads, epoch, cfg, ParamGroup::All)?;
        }
        m.epoch += 1;
    }

    if cfg.discrepancy_epochs == 0 || split.unlabeled.is_empty() {
        return Ok(());
    }
    m.reset_momentum();
    let batch_size = cfg.batch_size.min(split.unlabeled.len());
    match cfg.alternation {
        Alternation::PerEpoch => {
            for epoch in 0..cfg.discrepancy_epochs {
                let phase = if epoch % 2 == 0 { DiscrepancyPhase::Close } else { DiscrepancyPhase::Dis };
                for batch in batches(&split.unlabeled, batch_size, m) {
                    discrepancy_step(m, &batch, phase, cfg.epochs + epoch, cfg)?;
                }
                m.epoch += 1;
            }
        }
        Alternation::PerBatch => {
            for epoch in 0..cfg.discrepancy_epochs.div_ceil(2) {
                for batch in batches(&split.unlabeled, batch_size, m) {
                    discrepancy_step(m, &batch, DiscrepancyPhase::Close, cfg.epochs + epoch, cfg)?;
                    discrepancy_step(m, &batch, DiscrepancyPhase::Dis, cfg.epochs + epoch, cfg)?;
                }
                m.epoch += 1;
            }
        }
    }
    Ok(())
}
