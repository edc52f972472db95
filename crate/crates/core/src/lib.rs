//! Dirichlet-based coarse-to-fine example selection for open-set active
//! learning, plus a desk-scale experiment harness.

pub mod checks;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod evidential;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod selection;
pub mod special;
pub mod training;

pub use dataset::{DatasetSplit, Example};
pub use error::{Error, Result};
pub use evidential::{CategoricalProbs, DirichletParams, ScoreTriple};
pub use model::{DualHeadEvidence, ModelParams, Network, ParamGroup};
pub use training::{TrainConfig, TrainingObjective};
pub use harness::{CycleMetrics, Strategy};
pub use selection::{BaselineStrategy, QuerySet};
