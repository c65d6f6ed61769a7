//! NUS-WIDE (21 most frequent concepts) manifest parsing and split.

use std::path::Path;

use ndarray::Array4;

use super::dataset::ImageSet;
use super::preprocess::resize_bilinear;
use super::split::{DatasetSplit, Quota, SplitItem};
use crate::{Error, Result};

pub const NUS_WIDE_CLASSES: usize = 21;

/// 100 queries and 500 training images per concept.
pub const NUS_WIDE_QUOTA: Quota = Quota {
    query_per_class: 100,
    train_per_class: 500,
};

/// Parses `relative/path.jpg b0 b1 ... b20` lines (multi-hot concept flags).
/// Images without any of the concepts are skipped.
pub fn parse_nuswide_manifest(text: &str) -> Result<Vec<SplitItem>> {
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(path) = fields.next() else { continue };
        let flags: Vec<&str> = fields.collect();
        if flags.len() != NUS_WIDE_CLASSES {
            return Err(Error::Dataset(format!(
                "manifest line {}: expected {NUS_WIDE_CLASSES} concept flags, found {}",
                lineno + 1,
                flags.len()
            )));
        }
        let mut labels = Vec::new();
        for (c, f) in flags.iter().enumerate() {
            match *f {
                "1" => labels.push(c as u32),
                "0" => {}
                other => {
                    return Err(Error::Dataset(format!("manifest line {}: flag `{other}`", lineno + 1)));
                }
            }
        }
        if labels.is_empty() {
            continue;
        }
        items.push(SplitItem {
            id: items.len() as u64,
            path: path.to_string(),
            labels,
        });
    }
    Ok(items)
}

pub fn nuswide_split_from_items(items: Vec<SplitItem>, seed: u64) -> Result<DatasetSplit> {
    let mut present = [false; NUS_WIDE_CLASSES];
    for item in &items {
        for &l in &item.labels {
            present[l as usize] = true;
        }
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::Dataset(format!("manifest is missing category {c}")));
    }
    DatasetSplit::from_items("nuswide", items, NUS_WIDE_CLASSES, NUS_WIDE_QUOTA, seed)
}

pub fn make_nuswide_split(manifest: &Path, seed: u64) -> Result<DatasetSplit> {
    if !manifest.exists() {
        return Err(Error::Missing(manifest.to_path_buf()));
    }
    let items = parse_nuswide_manifest(&std::fs::read_to_string(manifest)?)?;
    nuswide_split_from_items(items, seed)
}

/// Decodes image files relative to `root`, resized to `size` x `size`.
pub fn load_images(root: &Path, items: &[&SplitItem], num_classes: usize, size: usize) -> Result<ImageSet> {
    let mut images = Array4::zeros((items.len(), 3, size, size));
    for (n, item) in items.iter().enumerate() {
        let path = root.join(&item.path);
        let chw = super::read_rgb(&path)?;
        let resized = resize_bilinear(chw.view(), size, size);
        images.index_axis_mut(ndarray::Axis(0), n).assign(&resized);
    }
    Ok(ImageSet {
        images,
        labels: items.iter().map(|i| i.labels.clone()).collect(),
        ids: items.iter().map(|i| i.id).collect(),
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(path: &str, on: &[usize]) -> String {
        let flags: Vec<&str> = (0..NUS_WIDE_CLASSES)
            .map(|c| if on.contains(&c) { "1" } else { "0" })
            .collect();
        format!("{path} {}", flags.join(" "))
    }

    #[test]
    fn parses_multi_hot_lines_and_skips_unlabeled() {
        let text = [line("a.jpg", &[0, 3]), line("b.jpg", &[]), line("c.jpg", &[20])].join("\n");
        let items = parse_nuswide_manifest(&text).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].labels, vec![0, 3]);
        assert_eq!(items[1].id, 1);
        assert!(parse_nuswide_manifest("x.jpg 1 0").is_err());
    }

    #[test]
    fn missing_category_is_reported() {
        let items = parse_nuswide_manifest(&line("a.jpg", &[1])).unwrap();
        let err = nuswide_split_from_items(items, 0).unwrap_err();
        assert!(err.to_string().contains("missing category 0"), "{err}");
    }

    #[test]
    fn loads_and_resizes_image_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_pixel(6, 4, image::Rgb([255, 0, 51]));
        img.save(dir.path().join("p.png")).unwrap();
        let item = SplitItem {
            id: 7,
            path: "p.png".into(),
            labels: vec![2],
        };
        let set = load_images(dir.path(), &[&item], NUS_WIDE_CLASSES, 8).unwrap();
        assert_eq!(set.images.dim(), (1, 3, 8, 8));
        assert!((set.images[[0, 0, 3, 3]] - 1.0).abs() < 1e-6);
        assert!((set.images[[0, 2, 0, 0]] - 0.2).abs() < 1e-6);
        assert_eq!(set.ids, vec![7]);
    }
}
