//! CIFAR-10 binary-format reader and retrieval split.

use std::path::{Path, PathBuf};

use ndarray::Array4;

use super::dataset::ImageSet;
use super::split::{DatasetSplit, Quota, SplitItem};
use crate::{Error, Result};

pub const CIFAR10_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];
pub const CIFAR10_CLASSES: usize = 10;
const SIDE: usize = 32;
const RECORD: usize = 1 + 3 * SIDE * SIDE;

/// 100 queries and 500 training images per class.
pub const CIFAR10_QUOTA: Quota = Quota {
    query_per_class: 100,
    train_per_class: 500,
};

/// `root/cifar-10-batches-bin` when present, otherwise `root`.
pub fn cifar10_dir(root: &Path) -> PathBuf {
    let nested = root.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn read_all(root: &Path) -> Result<Vec<Vec<u8>>> {
    let dir = cifar10_dir(root);
    CIFAR10_FILES
        .iter()
        .map(|name| {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::Missing(path));
            }
            let bytes = std::fs::read(&path)?;
            if bytes.is_empty() || bytes.len() % RECORD != 0 {
                return Err(Error::Dataset(format!(
                    "{} is corrupt: {} bytes is not a whole number of {RECORD}-byte records",
                    path.display(),
                    bytes.len()
                )));
            }
            Ok(bytes)
        })
        .collect()
}

fn records(files: &[Vec<u8>]) -> impl Iterator<Item = &[u8]> {
    files.iter().flat_map(|f| f.chunks_exact(RECORD))
}

/// Labels of every record, in file order; the position is the item id.
pub fn read_cifar10_labels(root: &Path) -> Result<Vec<u32>> {
    let files = read_all(root)?;
    records(&files)
        .enumerate()
        .map(|(i, r)| {
            let l = r[0] as u32;
            if l as usize >= CIFAR10_CLASSES {
                return Err(Error::Dataset(format!("record {i} has label {l}")));
            }
            Ok(l)
        })
        .collect()
}

/// Decodes the requested records (all when `ids` is `None`) into `[0, 1]`
/// RGB tensors.
pub fn load_cifar10(root: &Path, ids: Option<&[u64]>) -> Result<ImageSet> {
    let files = read_all(root)?;
    let all: Vec<&[u8]> = records(&files).collect();
    let ids: Vec<u64> = match ids {
        Some(ids) => ids.to_vec(),
        None => (0..all.len() as u64).collect(),
    };
    let mut images = Array4::zeros((ids.len(), 3, SIDE, SIDE));
    let mut labels = Vec::with_capacity(ids.len());
    for (n, &id) in ids.iter().enumerate() {
        let rec = all
            .get(id as usize)
            .ok_or_else(|| Error::Dataset(format!("CIFAR-10 has no record {id}")))?;
        labels.push(vec![rec[0] as u32]);
        for (k, &px) in rec[1..].iter().enumerate() {
            let (c, rest) = (k / (SIDE * SIDE), k % (SIDE * SIDE));
            images[[n, c, rest / SIDE, rest % SIDE]] = px as f32 / 255.0;
        }
    }
    Ok(ImageSet {
        images,
        labels,
        ids,
        num_classes: CIFAR10_CLASSES,
    })
}

/// Per-class query/train quotas over all 60,000 images; the rest is the
/// database.
pub fn make_cifar10_split(root: &Path, seed: u64) -> Result<DatasetSplit> {
    let labels = read_cifar10_labels(root)?;
    cifar10_split_from_labels(&labels, seed)
}

pub fn cifar10_split_from_labels(labels: &[u32], seed: u64) -> Result<DatasetSplit> {
    let items = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| SplitItem {
            id: i as u64,
            path: format!("cifar10:{i}"),
            labels: vec![l],
        })
        .collect();
    DatasetSplit::from_items("cifar10", items, CIFAR10_CLASSES, CIFAR10_QUOTA, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fake(dir: &Path, per_file: usize) {
        for (f, name) in CIFAR10_FILES.iter().enumerate() {
            let mut bytes = Vec::with_capacity(per_file * RECORD);
            for r in 0..per_file {
                bytes.push(((f * per_file + r) % 10) as u8);
                bytes.extend((0..RECORD - 1).map(|k| (k % 251) as u8));
            }
            std::fs::write(dir.join(name), bytes).unwrap();
        }
    }

    #[test]
    fn reads_labels_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        write_fake(dir.path(), 3);
        let labels = read_cifar10_labels(dir.path()).unwrap();
        assert_eq!(labels.len(), 18);
        assert_eq!(labels[..4], [0, 1, 2, 3]);
        let set = load_cifar10(dir.path(), Some(&[5, 0])).unwrap();
        assert_eq!(set.labels, vec![vec![5], vec![0]]);
        assert_eq!(set.images[[0, 0, 0, 1]], 1.0 / 255.0);
        // first pixel of the green plane
        assert_eq!(set.images[[1, 1, 0, 0]], (1024 % 251) as f32 / 255.0);
    }

    #[test]
    fn missing_and_corrupt_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_cifar10_labels(dir.path()), Err(Error::Missing(_))));
        write_fake(dir.path(), 1);
        std::fs::write(dir.path().join("test_batch.bin"), [1u8, 2, 3]).unwrap();
        assert!(matches!(read_cifar10_labels(dir.path()), Err(Error::Dataset(_))));
    }
}
