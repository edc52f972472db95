//! Fixtures shared by the benchmarks.

use openset_al::datagen::{make_blobs, BlobSpec};
use openset_al::harness::seed_labeled_pool;
use openset_al::training::train_cycle;
use openset_al::{DatasetSplit, ModelParams, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The desk-scale benchmark split (4 + 4 classes, dim 16, 250 per class,
/// r = 0.5) with a 5% labeled pool.
pub fn benchmark_split(seed: u64) -> DatasetSplit {
    let spec = BlobSpec {
        seed,
        ..BlobSpec::default()
    };
    let mut split = make_blobs(&spec, 0.5).expect("default blob spec is feasible");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    seed_labeled_pool(&mut split, 0.05, &mut rng).expect("every known class has examples");
    split
}

/// A model trained for one full cycle on `split`.
pub fn trained_model(split: &DatasetSplit, cfg: &TrainConfig) -> ModelParams {
    let mut m = ModelParams::new(split.feature_dim(), &cfg.hidden_widths, split.num_known, cfg.seed)
        .expect("valid architecture");
    train_cycle(&mut m, split, cfg).expect("training on a valid split");
    m
}
