use std::fs;
use std::path::{Path, PathBuf};

use openset_al::datagen::{load_idx, read_idx, IdxSource, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use openset_al::Error;

fn write_images(path: &Path, magic: u32, count: u32, rows: u32, cols: u32, payload: &[u8]) {
    let mut bytes = Vec::new();
    for v in [magic, count, rows, cols] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend_from_slice(payload);
    fs::write(path, bytes).unwrap();
}

fn write_labels(path: &Path, magic: u32, labels: &[u8]) {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&magic.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).unwrap();
}

/// `per_class` 2x2 images for each of `classes` labels, pixel value = label.
fn dataset(dir: &Path, classes: u8, per_class: usize) -> (PathBuf, PathBuf) {
    let labels: Vec<u8> = (0..per_class * classes as usize).map(|i| (i % classes as usize) as u8).collect();
    let pixels: Vec<u8> = labels.iter().flat_map(|&l| [l; 4]).collect();
    let images = dir.join("images.idx");
    let label_path = dir.join("labels.idx");
    write_images(&images, IDX_IMAGES_MAGIC, labels.len() as u32, 2, 2, &pixels);
    write_labels(&label_path, IDX_LABELS_MAGIC, &labels);
    (images, label_path)
}

fn source(images: PathBuf, labels: PathBuf, known: Vec<usize>) -> IdxSource {
    IdxSource {
        images,
        labels,
        known_classes: known,
        test_fraction: 0.2,
    }
}

#[test]
fn reads_pixels_scaled_to_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = dataset(dir.path(), 3, 2);
    let (features, raw) = read_idx(&images, &labels).unwrap();
    assert_eq!(features.len(), 6);
    assert_eq!(raw, vec![0, 1, 2, 0, 1, 2]);
    assert_eq!(features[2], vec![2.0 / 255.0; 4]);
}

#[test]
fn bad_magic_names_offset() {
    let dir = tempfile::tempdir().unwrap();
    let (_, labels) = dataset(dir.path(), 3, 2);
    let images = dir.path().join("bad.idx");
    write_images(&images, 0x0000_0802, 6, 2, 2, &[0; 24]);
    match read_idx(&images, &labels) {
        Err(Error::IdxFormat { offset, message, .. }) => {
            assert_eq!(offset, 0);
            assert!(message.contains("magic"), "{message}");
        }
        other => panic!("expected IdxFormat error, got {other:?}"),
    }
    let err = read_idx(&images, &labels).unwrap_err().to_string();
    assert!(err.contains("offset 0"), "{err}");
}

#[test]
fn truncated_payload_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (_, labels) = dataset(dir.path(), 3, 2);
    let images = dir.path().join("short.idx");
    write_images(&images, IDX_IMAGES_MAGIC, 6, 2, 2, &[0; 10]);
    match read_idx(&images, &labels) {
        Err(Error::IdxFormat { offset, .. }) => assert_eq!(offset, 16 + 10),
        other => panic!("expected IdxFormat error, got {other:?}"),
    }
}

#[test]
fn truncated_header_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (_, labels) = dataset(dir.path(), 3, 2);
    let images = dir.path().join("header.idx");
    fs::write(&images, [0, 0, 8, 3, 0, 0]).unwrap();
    assert!(matches!(read_idx(&images, &labels), Err(Error::IdxFormat { offset: 6, .. })));
}

#[test]
fn label_count_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (images, _) = dataset(dir.path(), 3, 2);
    let labels = dir.path().join("few.idx");
    write_labels(&labels, IDX_LABELS_MAGIC, &[0, 1, 2]);
    match read_idx(&images, &labels) {
        Err(Error::IdxFormat { offset, message, .. }) => {
            assert_eq!(offset, 4);
            assert!(message.contains("does not match"), "{message}");
        }
        other => panic!("expected IdxFormat error, got {other:?}"),
    }
}

#[test]
fn all_classes_known_with_positive_ratio_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = dataset(dir.path(), 4, 10);
    let src = source(images, labels, vec![0, 1, 2, 3]);
    assert!(matches!(load_idx(&src, 0.3, 0), Err(Error::InfeasibleOpenness { .. })));
    let split = load_idx(&src, 0.0, 0).unwrap();
    assert_eq!(split.unknown_in_unlabeled(), 0);
}

#[test]
fn ten_classes_five_known_at_forty_percent() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = dataset(dir.path(), 10, 100);
    let src = source(images, labels, vec![0, 2, 4, 6, 8]);
    let split = load_idx(&src, 0.4, 3).unwrap();
    let n = split.unlabeled.len() as f64;
    let unknown = split.unknown_in_unlabeled() as f64;
    assert!((unknown - 0.4 * n).abs() <= 1.0, "unknown {unknown} of {n}");
    assert_eq!(split.num_known, 5);
    assert_eq!(split.test.len(), 100);
    assert!(split.test.iter().all(|e| e.label < 5));
    // Original class 4 maps to known index 2; pixels still carry the raw label.
    let e = split.unlabeled.iter().find(|e| e.label == 2).unwrap();
    assert_eq!(e.features[0], 4.0 / 255.0);
    split.validate().unwrap();
}

#[test]
fn missing_known_class_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = dataset(dir.path(), 3, 4);
    let err = load_idx(&source(images, labels, vec![0, 7]), 0.2, 0).unwrap_err();
    assert!(err.to_string().contains("idx.known_classes"), "{err}");
}

#[test]
fn same_seed_same_split() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = dataset(dir.path(), 6, 20);
    let src = source(images, labels, vec![0, 1, 2]);
    let a = load_idx(&src, 0.3, 9).unwrap();
    let b = load_idx(&src, 0.3, 9).unwrap();
    assert_eq!(a.unlabeled, b.unlabeled);
    assert_eq!(a.test, b.test);
}
