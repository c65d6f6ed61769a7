use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};

use super::preprocess::{resize_bilinear, Preprocess};
use crate::{Error, Result};

/// Random access to model-ready images, materialized one batch at a time.
pub trait ImageSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(channels, height, width)` of every produced image.
    fn item_shape(&self) -> (usize, usize, usize);

    fn batch(&self, indices: &[usize]) -> Result<Array4<f32>>;
}

/// Images that are already preprocessed.
impl ImageSource for Array4<f32> {
    fn len(&self) -> usize {
        self.dim().0
    }

    fn item_shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.dim();
        (c, h, w)
    }

    fn batch(&self, indices: &[usize]) -> Result<Array4<f32>> {
        check_indices(indices, self.dim().0)?;
        Ok(self.select(Axis(0), indices))
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= len) {
        Some(i) => Err(Error::Shape(format!("image index {i} out of range for {len} images"))),
        None => Ok(()),
    }
}

/// Raw `[0, 1]` images held in memory, preprocessed per batch. Optionally
/// restricted to a subset of rows.
pub struct InMemorySource<'a> {
    raw: &'a Array4<f32>,
    rows: Option<Vec<usize>>,
    preprocess: Preprocess,
}

impl<'a> InMemorySource<'a> {
    pub fn new(raw: &'a Array4<f32>, preprocess: Preprocess) -> Self {
        InMemorySource { raw, rows: None, preprocess }
    }

    /// Exposes only `rows` of `raw`, in that order.
    pub fn with_rows(raw: &'a Array4<f32>, rows: Vec<usize>, preprocess: Preprocess) -> Result<Self> {
        check_indices(&rows, raw.dim().0)?;
        Ok(InMemorySource { raw, rows: Some(rows), preprocess })
    }
}

impl ImageSource for InMemorySource<'_> {
    fn len(&self) -> usize {
        self.rows.as_ref().map_or(self.raw.dim().0, Vec::len)
    }

    fn item_shape(&self) -> (usize, usize, usize) {
        (self.raw.dim().1, self.preprocess.size, self.preprocess.size)
    }

    fn batch(&self, indices: &[usize]) -> Result<Array4<f32>> {
        check_indices(indices, self.len())?;
        let picked = match &self.rows {
            Some(rows) => self.raw.select(Axis(0), &indices.iter().map(|&i| rows[i]).collect::<Vec<_>>()),
            None => self.raw.select(Axis(0), indices),
        };
        Ok(self.preprocess.apply(&picked))
    }
}

/// Image files under a root directory, decoded and preprocessed per batch.
pub struct FileSource {
    root: PathBuf,
    paths: Vec<String>,
    preprocess: Preprocess,
}

impl FileSource {
    pub fn new(root: &Path, paths: Vec<String>, preprocess: Preprocess) -> Self {
        FileSource {
            root: root.to_path_buf(),
            paths,
            preprocess,
        }
    }
}

/// Decodes an image file to `[0, 1]` RGB in CHW layout.
pub fn read_rgb(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut chw = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            chw[[c, y as usize, x as usize]] = px[c] as f32 / 255.0;
        }
    }
    Ok(chw)
}

impl ImageSource for FileSource {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn item_shape(&self) -> (usize, usize, usize) {
        (3, self.preprocess.size, self.preprocess.size)
    }

    fn batch(&self, indices: &[usize]) -> Result<Array4<f32>> {
        check_indices(indices, self.len())?;
        let s = self.preprocess.size;
        let mut raw = Array4::zeros((indices.len(), 3, s, s));
        for (n, &i) in indices.iter().enumerate() {
            let img = read_rgb(&self.root.join(&self.paths[i]))?;
            raw.index_axis_mut(Axis(0), n).assign(&resize_bilinear(img.view(), s, s));
        }
        Ok(self.preprocess.apply(&raw))
    }
}
