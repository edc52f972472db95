//! Run configuration: JSON with every training field defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use openset_al::datagen::{load_idx, make_blobs, BlobSpec, IdxSource};
use openset_al::{DatasetSplit, Strategy, TrainConfig};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "OPENSET_AL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Blobs(BlobSpec),
    Idx(IdxSource),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Blobs(BlobSpec::default())
    }
}

impl DataConfig {
    /// Builds the split for one run. Blob data is regenerated per run seed
    /// (offset by the blob seed); IDX data is re-split per run seed.
    pub fn load(&self, r: f64, seed: u64) -> openset_al::Result<DatasetSplit> {
        match self {
            DataConfig::Blobs(spec) => {
                let spec = BlobSpec {
                    seed: spec.seed.wrapping_add(seed),
                    ..spec.clone()
                };
                make_blobs(&spec, r)
            }
            DataConfig::Idx(source) => load_idx(source, r, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    pub strategies: Vec<Strategy>,
    pub openness_ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Write measured wall time into the metric CSVs (breaks byte-identical reruns).
    #[serde(default)]
    pub record_wall_time: bool,
}

/// A configuration problem, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the seed list with the single seed given by the environment.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| ConfigError(format!("{SEED_ENV}: expected an unsigned integer, got '{v}'")))?;
            self.seeds = vec![seed];
            self.train.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.strategies.is_empty() {
            return err("strategies: at least one strategy is required".into());
        }
        if self.openness_ratios.is_empty() {
            return err("openness_ratios: at least one ratio is required".into());
        }
        if let Some(r) = self.openness_ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return err(format!("openness_ratios: {r} is outside [0, 1)"));
        }
        if self.seeds.is_empty() {
            return err("seeds: at least one seed is required".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return err("output_dir: must not be empty".into());
        }
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        match &self.data {
            DataConfig::Blobs(spec) => {
                spec.validate().map_err(|e| ConfigError(e.to_string()))?;
                for &r in &self.openness_ratios {
                    if r > spec.max_openness() {
                        return err(format!(
                            "openness_ratios: {r} exceeds the achievable maximum {:.4} for these blobs",
                            spec.max_openness()
                        ));
                    }
                }
            }
            DataConfig::Idx(source) => {
                for (field, path) in [("data.idx.images", &source.images), ("data.idx.labels", &source.labels)] {
                    if !path.is_file() {
                        return err(format!("{field}: {} is not a readable file", path.display()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// File stem for one run's outputs.
pub fn run_stem(strategy: Strategy, r: f64, seed: u64) -> String {
    format!("run_{}_r{r}_s{seed}", strategy.name())
}
