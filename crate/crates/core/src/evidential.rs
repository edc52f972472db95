//! Closed-form Dirichlet mathematics for evidential classification.
//!
//! A network's logits are mapped to a positive evidence vector `alpha`, which
//! parameterizes a Dirichlet over the class simplex. From `alpha` we derive the
//! expected categorical prediction and split its entropy into
//!
//! - data uncertainty: the expected entropy of a categorical drawn from the
//!   Dirichlet, and
//! - distribution uncertainty: the mutual information between the label and
//!   the categorical, i.e. total entropy minus data uncertainty.
//!
//! Entropies are in nats. The Jensen-Shannon divergence uses base-2 logarithms
//! so that it is bounded by one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, log_gamma_unchecked};

/// Logits are clamped to `[-EVIDENCE_LOGIT_BOUND, EVIDENCE_LOGIT_BOUND]` before
/// exponentiation, so evidence lies in roughly `[4.5e-5, 2.2e4]`.
pub const EVIDENCE_LOGIT_BOUND: f64 = 10.0;

/// Tolerance on the sum of a [`CategoricalProbs`].
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Positive evidence vector parameterizing a Dirichlet over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Domain(format!(
                "Dirichlet needs at least 2 classes, got {}",
                alpha.len()
            )));
        }
        if let Some((i, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !a.is_finite() || **a <= 0.0)
        {
            return Err(Error::Domain(format!(
                "evidence component {i} must be finite and positive, got {a}"
            )));
        }
        Ok(Self { alpha })
    }

    /// Symmetric Dirichlet with every component equal to `value`.
    pub fn symmetric(classes: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; classes])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    /// Dirichlet strength `S = sum(alpha)`.
    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Element-wise mean of two evidence vectors of equal dimension.
    pub fn average(&self, other: &DirichletParams) -> Result<DirichletParams> {
        check_dims(self.num_classes(), other.num_classes())?;
        Ok(DirichletParams {
            alpha: self
                .alpha
                .iter()
                .zip(&other.alpha)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
        })
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.alpha
    }
}

/// A categorical distribution over `C` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalProbs {
    p: Vec<f64>,
}

impl CategoricalProbs {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Domain("empty categorical".into()));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("probabilities must lie in [0, 1]: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Domain(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { p })
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn num_classes(&self) -> usize {
        self.p.len()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.p.iter().enumerate() {
            if v > self.p[best] {
                best = i;
            }
        }
        best
    }

    /// Element-wise mean of two categoricals.
    pub fn average(&self, other: &CategoricalProbs) -> Result<CategoricalProbs> {
        check_dims(self.num_classes(), other.num_classes())?;
        Ok(CategoricalProbs {
            p: self.p.iter().zip(&other.p).map(|(a, b)| 0.5 * (a + b)).collect(),
        })
    }
}

/// Per-example selection signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    /// Expected categorical entropy, nats.
    pub u_data: f64,
    /// Mutual information between label and categorical, nats.
    pub u_dist: f64,
    /// L2 distance between the two heads' evidence vectors.
    pub s_dis: f64,
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Clamped exponential evidence mapping.
pub fn evidence_from_logits(logits: &[f64]) -> Result<DirichletParams> {
    if let Some(z) = logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::Domain(format!("non-finite logit {z}")));
    }
    DirichletParams::new(
        logits
            .iter()
            .map(|z| z.clamp(-EVIDENCE_LOGIT_BOUND, EVIDENCE_LOGIT_BOUND).exp())
            .collect(),
    )
}

/// Mean of the Dirichlet, `alpha / sum(alpha)`.
pub fn expected_probs(d: &DirichletParams) -> CategoricalProbs {
    let s = d.strength();
    CategoricalProbs {
        p: d.alpha.iter().map(|a| a / s).collect(),
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &CategoricalProbs) -> f64 {
    -p.p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Expected entropy `E_{rho ~ Dir(alpha)}[H(rho)]`.
pub fn data_uncertainty(d: &DirichletParams) -> f64 {
    let s = d.strength();
    let psi_total = digamma_unchecked(s + 1.0);
    d.alpha
        .iter()
        .map(|&a| (a / s) * (psi_total - digamma_unchecked(a + 1.0)))
        .sum::<f64>()
        .max(0.0)
}

/// Mutual information between the label and the categorical parameter.
pub fn distribution_uncertainty(d: &DirichletParams) -> f64 {
    let s = d.strength();
    let psi_total = digamma_unchecked(s + 1.0);
    let expected_term: f64 = d
        .alpha
        .iter()
        .map(|&a| (a / s) * (digamma_unchecked(a + 1.0) - psi_total))
        .sum();
    (expected_term + entropy(&expected_probs(d))).max(0.0)
}

/// Jensen-Shannon divergence in bits.
pub fn jsd(p: &CategoricalProbs, q: &CategoricalProbs) -> Result<f64> {
    check_dims(p.num_classes(), q.num_classes())?;
    Ok(jsd_slices(&p.p, &q.p))
}

pub(crate) fn jsd_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).log2();
        }
    }
    acc.clamp(0.0, 1.0)
}

/// `KL(Dir(alpha) || Dir(1))` in closed form.
pub fn kl_dirichlet_to_uniform(d: &DirichletParams) -> f64 {
    let c = d.num_classes() as f64;
    let s = d.strength();
    let psi_total = digamma_unchecked(s);
    let log_norm = log_gamma_unchecked(s)
        - log_gamma_unchecked(c)
        - d.alpha.iter().map(|&a| log_gamma_unchecked(a)).sum::<f64>();
    let expectation: f64 = d
        .alpha
        .iter()
        .map(|&a| (a - 1.0) * (digamma_unchecked(a) - psi_total))
        .sum();
    (log_norm + expectation).max(0.0)
}

/// L2 distance between two evidence vectors.
pub fn discrepancy_score(a1: &DirichletParams, a2: &DirichletParams) -> Result<f64> {
    check_dims(a1.num_classes(), a2.num_classes())?;
    Ok(a1
        .alpha
        .iter()
        .zip(&a2.alpha)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Uncertainties from the heads' averaged evidence, discrepancy from the pair.
pub fn score_triple(a1: &DirichletParams, a2: &DirichletParams) -> Result<ScoreTriple> {
    let avg = a1.average(a2)?;
    Ok(ScoreTriple {
        u_data: data_uncertainty(&avg),
        u_dist: distribution_uncertainty(&avg),
        s_dis: discrepancy_score(a1, a2)?,
    })
}
