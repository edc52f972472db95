//! Dual-head multilayer perceptron with hand-written backpropagation.
//!
//! A ReLU backbone maps features to a shared representation; two linear heads
//! map that representation to per-class logits. Evidence is the clamped
//! exponential of each head's logits.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::{evidence_from_logits, DirichletParams, EVIDENCE_LOGIT_BOUND};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Head weights are drawn with this fraction of the fan-in standard deviation.
pub const HEAD_INIT_SCALE: f64 = 0.1;

/// Fully connected layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn random<R: Rng>(inputs: usize, outputs: usize, std_dev: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std_dev).expect("positive std");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    /// Adds `delta ⊗ input` to this layer, treating it as a gradient buffer.
    fn accumulate(&mut self, delta: &[f64], input: &[f64]) {
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            self.bias[o] += d;
            let row = &mut self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (w, v) in row.iter_mut().zip(input) {
                *w += d * v;
            }
        }
    }

    /// `W^T delta`, added into `out`.
    fn back(&self, delta: &[f64], out: &mut [f64]) {
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (acc, w) in out.iter_mut().zip(row) {
                *acc += d * w;
            }
        }
    }
}

/// Which parameters an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    All,
    Backbone,
    Heads,
}

impl ParamGroup {
    pub fn backbone(self) -> bool {
        matches!(self, ParamGroup::All | ParamGroup::Backbone)
    }

    pub fn heads(self) -> bool {
        matches!(self, ParamGroup::All | ParamGroup::Heads)
    }
}

/// Backbone layers plus two classifier heads. Also used as the gradient and
/// momentum buffer type, since those mirror the parameter shapes exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub backbone: Vec<Dense>,
    pub heads: [Dense; 2],
}

/// Intermediate values from a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[k + 1]` is the ReLU output of layer k.
    pub activations: Vec<Vec<f64>>,
    pub logits: [Vec<f64>; 2],
}

impl ForwardCache {
    pub fn representation(&self) -> &[f64] {
        self.activations.last().expect("input is always cached")
    }
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.backbone.first().map_or(self.heads[0].inputs, |l| l.inputs)
    }

    pub fn num_classes(&self) -> usize {
        self.heads[0].outputs
    }

    pub fn zeros_like(&self) -> Network {
        Network {
            backbone: self.backbone.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            heads: [
                Dense::zeros(self.heads[0].inputs, self.heads[0].outputs),
                Dense::zeros(self.heads[1].inputs, self.heads[1].outputs),
            ],
        }
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.backbone.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.backbone {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(activations.last().unwrap(), &mut out);
            for v in &mut out {
                *v = v.max(0.0);
            }
            activations.push(out);
        }
        let rep = activations.last().unwrap();
        let mut l1 = Vec::new();
        let mut l2 = Vec::new();
        self.heads[0].apply(rep, &mut l1);
        self.heads[1].apply(rep, &mut l2);
        Ok(ForwardCache {
            activations,
            logits: [l1, l2],
        })
    }

    /// Backpropagates per-head logit gradients, accumulating into `grads` only
    /// the parameters selected by `group`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: [&[f64]; 2], group: ParamGroup, grads: &mut Network) {
        let rep = cache.representation();
        if group.heads() {
            for (head, d) in grads.heads.iter_mut().zip(dlogits) {
                head.accumulate(d, rep);
            }
        }
        if !group.backbone() {
            return;
        }
        let mut delta = vec![0.0; rep.len()];
        for (head, d) in self.heads.iter().zip(dlogits) {
            head.back(d, &mut delta);
        }
        for k in (0..self.backbone.len()).rev() {
            let out = &cache.activations[k + 1];
            for (d, a) in delta.iter_mut().zip(out) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            grads.backbone[k].accumulate(&delta, &cache.activations[k]);
            if k > 0 {
                let mut next = vec![0.0; self.backbone[k].inputs];
                self.backbone[k].back(&delta, &mut next);
                delta = next;
            }
        }
    }

    /// Every tensor with a label and its group, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ParamGroup, &Vec<f64>)> {
        let mut out = Vec::new();
        for (k, l) in self.backbone.iter().enumerate() {
            out.push((format!("backbone[{k}].weights"), ParamGroup::Backbone, &l.weights));
            out.push((format!("backbone[{k}].bias"), ParamGroup::Backbone, &l.bias));
        }
        for (h, l) in self.heads.iter().enumerate() {
            out.push((format!("head{}.weights", h + 1), ParamGroup::Heads, &l.weights));
            out.push((format!("head{}.bias", h + 1), ParamGroup::Heads, &l.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for l in &mut self.backbone {
            out.push((ParamGroup::Backbone, &mut l.weights));
            out.push((ParamGroup::Backbone, &mut l.bias));
        }
        for l in &mut self.heads {
            out.push((ParamGroup::Heads, &mut l.weights));
            out.push((ParamGroup::Heads, &mut l.bias));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }
}

/// Per-example evidence from the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DualHeadEvidence {
    pub a1: DirichletParams,
    pub a2: DirichletParams,
}

impl DualHeadEvidence {
    pub fn from_logits(logits: &[Vec<f64>; 2]) -> Result<Self> {
        Ok(Self {
            a1: evidence_from_logits(&logits[0])?,
            a2: evidence_from_logits(&logits[1])?,
        })
    }
}

/// Network, momentum buffers, optimizer epoch counter and shuffling RNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub network: Network,
    pub velocity: Network,
    pub epoch: u64,
    pub rng: ChaCha8Rng,
}

impl ModelParams {
    /// He-initialized backbone, heads drawn from the same distribution with
    /// separate seeds so that they start out disagreeing.
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || classes < 2 || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "invalid architecture: input {input_dim}, hidden {hidden:?}, classes {classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut backbone = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &next in hidden {
            backbone.push(Dense::random(width, next, (2.0 / width as f64).sqrt(), &mut rng));
            width = next;
        }
        // Heads start near zero logits (evidence near 1); a full-scale init lets the
        // first KL gradients push every logit past the clamp, where learning stops.
        let head_std = HEAD_INIT_SCALE * (1.0 / width as f64).sqrt();
        let head_rng = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k));
        let heads = [
            Dense::random(width, classes, head_std, &mut head_rng(1)),
            Dense::random(width, classes, head_std, &mut head_rng(2)),
        ];
        let network = Network { backbone, heads };
        let velocity = network.zeros_like();
        Ok(Self {
            network,
            velocity,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_5EED),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.network.num_classes()
    }

    pub fn reset_momentum(&mut self) {
        self.velocity = self.network.zeros_like();
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            input_dim: self.network.input_dim(),
            hidden_widths: self.network.backbone.iter().map(|l| l.outputs).collect(),
            num_classes: self.num_classes(),
            params: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&ckpt)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(ckpt.version));
        }
        let net = &ckpt.params.network;
        let hidden: Vec<usize> = net.backbone.iter().map(|l| l.outputs).collect();
        if net.input_dim() != ckpt.input_dim || hidden != ckpt.hidden_widths || net.num_classes() != ckpt.num_classes {
            return Err(Error::InvalidArgument("checkpoint shapes disagree with header".into()));
        }
        Ok(ckpt.params)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    input_dim: usize,
    hidden_widths: Vec<usize>,
    num_classes: usize,
    params: ModelParams,
}

/// Evidence of both heads for a single feature vector.
pub fn forward(m: &ModelParams, x: &[f64]) -> Result<DualHeadEvidence> {
    DualHeadEvidence::from_logits(&m.network.forward_cached(x)?.logits)
}

/// Logits are clamped before exponentiation; the clamp has zero derivative
/// outside the bound.
pub(crate) fn clamp_mask(z: f64) -> f64 {
    if z.abs() < EVIDENCE_LOGIT_BOUND {
        1.0
    } else {
        0.0
    }
}
