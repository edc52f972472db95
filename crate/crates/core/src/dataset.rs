//! Pools of examples for open-set active learning.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single feature vector with its true class.
///
/// Known classes are numbered `0..num_known`; unknown classes carry ids
/// `>= num_known`. The label of an unlabeled example is hidden from the
/// strategies and only read by the simulated oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub features: Vec<f64>,
    pub label: usize,
}

/// Labeled pool, unlabeled pool and known-class test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub num_known: usize,
    pub unknown_classes: Vec<usize>,
    pub openness_ratio: f64,
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub test: Vec<Example>,
    /// Ids of unknown-class examples removed from the pool after being queried.
    pub discarded: Vec<usize>,
}

impl DatasetSplit {
    pub fn is_known(&self, label: usize) -> bool {
        label < self.num_known
    }

    pub fn feature_dim(&self) -> usize {
        self.labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.test)
            .map(|e| e.features.len())
            .next()
            .unwrap_or(0)
    }

    /// Total number of examples ever placed in the split.
    pub fn total_examples(&self) -> usize {
        self.labeled.len() + self.unlabeled.len() + self.test.len() + self.discarded.len()
    }

    pub fn unknown_in_unlabeled(&self) -> usize {
        self.unlabeled.iter().filter(|e| !self.is_known(e.label)).count()
    }

    /// Checks purity, disjointness and feature consistency.
    pub fn validate(&self) -> Result<()> {
        if self.num_known < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 known classes, got {}",
                self.num_known
            )));
        }
        if let Some(e) = self.labeled.iter().find(|e| !self.is_known(e.label)) {
            return Err(Error::InvalidArgument(format!(
                "labeled pool contains unknown-class example {}",
                e.id
            )));
        }
        if let Some(e) = self.test.iter().find(|e| !self.is_known(e.label)) {
            return Err(Error::InvalidArgument(format!(
                "test set contains unknown-class example {}",
                e.id
            )));
        }
        let mut seen = HashSet::new();
        let pools = self.labeled.iter().chain(&self.unlabeled).chain(&self.test);
        for id in pools.map(|e| e.id).chain(self.discarded.iter().copied()) {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("example {id} appears twice")));
            }
        }
        let dim = self.feature_dim();
        if let Some(e) = self
            .labeled
            .iter()
            .chain(&self.unlabeled)
            .chain(&self.test)
            .find(|e| e.features.len() != dim || e.features.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "example {} has {} features (expected {dim}) or non-finite values",
                e.id,
                e.features.len()
            )));
        }
        Ok(())
    }
}

/// Number of unknown examples needed so that they make up fraction `r` of a
/// pool holding `known` known-class examples.
pub(crate) fn unknown_count_for_ratio(known: usize, available_unknown: usize, r: f64) -> Result<usize> {
    let max = if known + available_unknown == 0 {
        0.0
    } else {
        available_unknown as f64 / (known + available_unknown) as f64
    };
    if !(0.0..1.0).contains(&r) || !r.is_finite() {
        return Err(Error::InfeasibleOpenness { requested: r, max });
    }
    let needed = (r * known as f64 / (1.0 - r)).round() as usize;
    if needed > available_unknown {
        return Err(Error::InfeasibleOpenness { requested: r, max });
    }
    Ok(needed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: usize, label: usize) -> Example {
        Example { id, features: vec![0.0, 1.0], label }
    }

    fn split() -> DatasetSplit {
        DatasetSplit {
            num_known: 2,
            unknown_classes: vec![2],
            openness_ratio: 0.5,
            labeled: vec![ex(0, 0)],
            unlabeled: vec![ex(1, 1), ex(2, 2)],
            test: vec![ex(3, 0)],
            discarded: vec![],
        }
    }

    #[test]
    fn valid_split_passes() {
        split().validate().unwrap();
        assert_eq!(split().unknown_in_unlabeled(), 1);
        assert_eq!(split().total_examples(), 4);
    }

    #[test]
    fn impure_labeled_pool_rejected() {
        let mut s = split();
        s.labeled.push(ex(9, 2));
        assert!(s.validate().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut s = split();
        s.test.push(ex(1, 1));
        assert!(s.validate().is_err());
        let mut s = split();
        s.discarded.push(0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn openness_counts() {
        assert_eq!(unknown_count_for_ratio(1000, 1000, 0.5).unwrap(), 1000);
        assert_eq!(unknown_count_for_ratio(1000, 1000, 0.0).unwrap(), 0);
        assert_eq!(unknown_count_for_ratio(600, 1000, 0.4).unwrap(), 400);
        assert!(matches!(
            unknown_count_for_ratio(1000, 1000, 0.6),
            Err(Error::InfeasibleOpenness { .. })
        ));
        assert!(unknown_count_for_ratio(10, 0, 1.0).is_err());
    }
}
