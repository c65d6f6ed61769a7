use ndarray::{Array4, Axis};

/// Decoded images `(N, 3, H, W)` with per-item label sets and stable ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub images: Array4<f32>,
    pub labels: Vec<Vec<u32>>,
    pub ids: Vec<u64>,
    pub num_classes: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Array4<f32> {
        self.images.select(Axis(0), indices)
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            images: self.batch(indices),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Positions of `ids` within this set, in the order given.
    pub fn positions_of(&self, ids: &[u64]) -> Option<Vec<usize>> {
        let index: std::collections::HashMap<u64, usize> =
            self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        ids.iter().map(|id| index.get(id).copied()).collect()
    }
}
