//! Synthetic open-set blobs and an IDX loader for small real datasets.
//!
//! Both producers return a [`DatasetSplit`] with an empty labeled pool: every
//! known-class training example starts in the unlabeled pool, and unknown
//! classes are subsampled so that they make up the requested fraction `r` of
//! it. The experiment harness draws the initial labeled set.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{unknown_count_for_ratio, DatasetSplit, Example};
use crate::error::{Error, Result};

/// Gaussian clusters whose means sit on a hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub num_known: usize,
    pub num_unknown: usize,
    pub dim: usize,
    /// Training examples generated per class.
    pub per_class: usize,
    /// Additional test examples generated per known class.
    pub test_per_class: usize,
    pub radius: f64,
    pub cluster_std: f64,
    /// Minimum angle in degrees between any two class means.
    pub min_separation_deg: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            num_known: 4,
            num_unknown: 4,
            dim: 16,
            per_class: 250,
            test_per_class: 100,
            radius: 4.0,
            cluster_std: 1.0,
            min_separation_deg: 60.0,
            seed: 0,
        }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("blobs.{msg}")));
        if self.num_known < 2 {
            return bad(format!("num_known: need at least 2, got {}", self.num_known));
        }
        if self.num_unknown == 0 {
            return bad("num_unknown: must be positive".into());
        }
        if self.dim == 0 || self.per_class == 0 || self.test_per_class == 0 {
            return bad("dim, per_class and test_per_class must be positive".into());
        }
        if !(self.cluster_std.is_finite() && self.cluster_std > 0.0) {
            return bad(format!("cluster_std: must be positive, got {}", self.cluster_std));
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return bad(format!("radius: must be non-negative, got {}", self.radius));
        }
        if !(0.0..180.0).contains(&self.min_separation_deg) {
            return bad(format!("min_separation_deg: must lie in [0, 180), got {}", self.min_separation_deg));
        }
        Ok(())
    }

    pub fn max_openness(&self) -> f64 {
        let u = (self.num_unknown * self.per_class) as f64;
        u / (u + (self.num_known * self.per_class) as f64)
    }
}

const MEAN_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Class means on a sphere of the given radius with pairwise angles of at
/// least `min_separation_deg`, by seeded rejection sampling.
pub fn class_means(spec: &BlobSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let classes = spec.num_known + spec.num_unknown;
    let max_cos = spec.min_separation_deg.to_radians().cos();
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut placed = false;
        for _ in 0..MEAN_PLACEMENT_ATTEMPTS {
            let mut v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let ok = dirs
                .iter()
                .all(|d| d.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() <= max_cos);
            if ok {
                dirs.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidArgument(format!(
                "cannot place {classes} class means in {} dimensions with {} degrees separation",
                spec.dim, spec.min_separation_deg
            )));
        }
    }
    Ok(dirs
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * spec.radius).collect())
        .collect())
}

fn sample_around(mean: &[f64], std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    mean.iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + std * z
        })
        .collect()
}

/// Generates an open-set split with openness ratio `r`.
pub fn make_blobs(spec: &BlobSpec, r: f64) -> Result<DatasetSplit> {
    spec.validate()?;
    let known_total = spec.num_known * spec.per_class;
    let unknown_total = spec.num_unknown * spec.per_class;
    let needed = unknown_count_for_ratio(known_total, unknown_total, r)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng)?;
    let mut next_id = 0;
    let mut make = |label: usize, rng: &mut ChaCha8Rng| {
        let e = Example {
            id: next_id,
            features: sample_around(&means[label], spec.cluster_std, rng),
            label,
        };
        next_id += 1;
        e
    };

    let mut unlabeled = Vec::with_capacity(known_total + needed);
    let mut test = Vec::with_capacity(spec.num_known * spec.test_per_class);
    for c in 0..spec.num_known {
        for _ in 0..spec.per_class {
            unlabeled.push(make(c, &mut rng));
        }
        for _ in 0..spec.test_per_class {
            test.push(make(c, &mut rng));
        }
    }
    let mut unknown = Vec::with_capacity(unknown_total);
    for c in spec.num_known..spec.num_known + spec.num_unknown {
        for _ in 0..spec.per_class {
            unknown.push(make(c, &mut rng));
        }
    }
    unknown.shuffle(&mut rng);
    unknown.truncate(needed);
    unlabeled.extend(unknown);
    // Ids must carry no label information: selectors break ties by id.
    unlabeled.shuffle(&mut rng);
    for (id, e) in unlabeled.iter_mut().chain(test.iter_mut()).enumerate() {
        e.id = id;
    }

    let split = DatasetSplit {
        num_known: spec.num_known,
        unknown_classes: (spec.num_known..spec.num_known + spec.num_unknown).collect(),
        openness_ratio: r,
        labeled: Vec::new(),
        unlabeled,
        test,
        discarded: Vec::new(),
    };
    split.validate()?;
    Ok(split)
}

/// Options for [`load_idx`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub known_classes: Vec<usize>,
    /// Fraction of known-class examples held out as the test set.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    offset: usize,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        Ok(Self {
            path,
            bytes: fs::read(path)?,
            offset: 0,
        })
    }

    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::IdxFormat {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.offset + 4;
        if end > self.bytes.len() {
            return Err(self.error(self.bytes.len(), format!("truncated while reading {what}")));
        }
        let v = u32::from_be_bytes(self.bytes[self.offset..end].try_into().unwrap());
        self.offset = end;
        Ok(v)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32("magic number")?;
        if got != expected {
            return Err(self.error(0, format!("bad magic number 0x{got:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&[u8]> {
        let end = self.offset + len;
        if end > self.bytes.len() {
            return Err(self.error(
                self.bytes.len(),
                format!("truncated payload: need {len} bytes from offset {}", self.offset),
            ));
        }
        Ok(&self.bytes[self.offset..end])
    }
}

/// Images scaled to [0, 1] and flattened, with their labels.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let mut images = IdxReader::open(images_path)?;
    images.magic(IDX_IMAGES_MAGIC)?;
    let count_offset = images.offset;
    let count = images.u32("image count")? as usize;
    let rows = images.u32("row count")? as usize;
    let cols = images.u32("column count")? as usize;
    let pixels = rows * cols;
    let data = images.payload(count * pixels)?;
    let features: Vec<Vec<f64>> = data
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| p as f64 / 255.0).collect())
        .collect();

    let mut labels = IdxReader::open(labels_path)?;
    labels.magic(IDX_LABELS_MAGIC)?;
    let label_count_offset = labels.offset;
    let label_count = labels.u32("label count")? as usize;
    if label_count != count {
        return Err(labels.error(
            label_count_offset,
            format!(
                "label count {label_count} does not match image count {count} (image header offset {count_offset})"
            ),
        ));
    }
    let label_bytes = labels.payload(label_count)?.to_vec();
    Ok((features, label_bytes))
}

/// Loads an IDX image/label pair as an open-set split.
pub fn load_idx(source: &IdxSource, r: f64, seed: u64) -> Result<DatasetSplit> {
    if !(source.test_fraction > 0.0 && source.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "idx.test_fraction must lie in (0, 1), got {}",
            source.test_fraction
        )));
    }
    let (features, raw_labels) = read_idx(&source.images, &source.labels)?;
    let mut known = source.known_classes.clone();
    known.sort_unstable();
    known.dedup();
    if known.len() < 2 {
        return Err(Error::InvalidArgument("idx.known_classes: need at least 2 classes".into()));
    }
    let mut present: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    present.sort_unstable();
    present.dedup();
    if let Some(missing) = known.iter().find(|k| !present.contains(k)) {
        return Err(Error::InvalidArgument(format!(
            "idx.known_classes: class {missing} does not occur in the label file"
        )));
    }
    let unknown: Vec<usize> = present.iter().copied().filter(|c| !known.contains(c)).collect();
    let remap = |raw: usize| -> usize {
        match known.binary_search(&raw) {
            Ok(i) => i,
            Err(_) => known.len() + unknown.binary_search(&raw).expect("label is present"),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut known_pool = Vec::new();
    let mut unknown_pool = Vec::new();
    for (id, (f, &raw)) in features.into_iter().zip(&raw_labels).enumerate() {
        let label = remap(raw as usize);
        let e = Example { id, features: f, label };
        if label < known.len() {
            known_pool.push(e);
        } else {
            unknown_pool.push(e);
        }
    }
    known_pool.shuffle(&mut rng);
    let n_test = ((known_pool.len() as f64) * source.test_fraction).round() as usize;
    let mut test: Vec<Example> = known_pool.drain(..n_test).collect();
    test.sort_by_key(|e| e.id);
    known_pool.sort_by_key(|e| e.id);

    let needed = unknown_count_for_ratio(known_pool.len(), unknown_pool.len(), r)?;
    unknown_pool.shuffle(&mut rng);
    unknown_pool.truncate(needed);
    unknown_pool.sort_by_key(|e| e.id);
    let mut unlabeled = known_pool;
    unlabeled.extend(unknown_pool);
    unlabeled.sort_by_key(|e| e.id);

    let split = DatasetSplit {
        num_known: known.len(),
        unknown_classes: (known.len()..known.len() + unknown.len()).collect(),
        openness_ratio: r,
        labeled: Vec::new(),
        unlabeled,
        test,
        discarded: Vec::new(),
    };
    split.validate()?;
    Ok(split)
}

/// Writes `id, split, label, f0, f1, ...` with one row per example.
pub fn export_split_csv<W: Write>(split: &DatasetSplit, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = split.feature_dim();
    let mut header = vec!["id".to_string(), "split".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (name, pool) in [("labeled", &split.labeled), ("unlabeled", &split.unlabeled), ("test", &split.test)] {
        for e in pool {
            let mut row = vec![e.id.to_string(), name.to_string(), e.label.to_string()];
            row.extend(e.features.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
