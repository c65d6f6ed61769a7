//! Deterministic class-conditioned image generator for desk-scale runs.

use std::f32::consts::PI;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::ImageSet;
use super::split::{DatasetSplit, Quota, SplitItem};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub images_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    pub query_per_class: usize,
    pub train_per_class: usize,
}

impl SyntheticSpec {
    /// One sixth of each class becomes queries and half becomes training
    /// data; the rest is the database.
    pub fn new(num_classes: usize, images_per_class: usize, image_size: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_classes,
            images_per_class,
            image_size,
            seed,
            query_per_class: images_per_class / 6,
            train_per_class: images_per_class / 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub images: ImageSet,
    pub split: DatasetSplit,
}

/// Two oriented colour gratings per class.
struct Prototype {
    waves: [(f32, f32, [f32; 3]); 2],
}

const NOISE_STD: f32 = 0.08;

fn prototype(rng: &mut ChaCha8Rng) -> Prototype {
    let mut wave = |amp: f32| {
        let theta = rng.random_range(0.0..PI);
        let freq = rng.random_range(1.5f32..5.0);
        let color = [
            amp * rng.random_range(-1.0f32..1.0),
            amp * rng.random_range(-1.0f32..1.0),
            amp * rng.random_range(-1.0f32..1.0),
        ];
        (theta, freq, color)
    };
    Prototype {
        waves: [wave(0.3), wave(0.18)],
    }
}

/// Images are interleaved by class (item `i` has class `i % num_classes`),
/// each a jittered rendering of its class prototype plus pixel noise, in
/// `[0, 1]`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<Prototype> = (0..spec.num_classes).map(|_| prototype(&mut rng)).collect();
    let noise = Normal::new(0.0f32, NOISE_STD).expect("finite std");
    let total = spec.num_classes * spec.images_per_class;
    let s = spec.image_size;
    let mut images = Array4::zeros((total, 3, s, s));
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % spec.num_classes;
        labels.push(vec![class as u32]);
        let proto = &prototypes[class];
        let jitter: Vec<(f32, f32, f32)> = proto
            .waves
            .iter()
            .map(|&(theta, freq, _)| {
                (
                    theta + rng.random_range(-0.15f32..0.15),
                    freq * rng.random_range(0.9f32..1.1),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        for y in 0..s {
            for x in 0..s {
                let (u, v) = (x as f32 / s as f32, y as f32 / s as f32);
                let phases: Vec<f32> = jitter
                    .iter()
                    .map(|&(t, f, p)| (2.0 * PI * f * (u * t.cos() + v * t.sin()) + p).sin())
                    .collect();
                for c in 0..3 {
                    let mut val = 0.5;
                    for (w, ph) in proto.waves.iter().zip(&phases) {
                        val += w.2[c] * ph;
                    }
                    val += noise.sample(&mut rng);
                    images[[i, c, y, x]] = val.clamp(0.0, 1.0);
                }
            }
        }
    }
    let items: Vec<SplitItem> = (0..total)
        .map(|i| SplitItem {
            id: i as u64,
            path: format!("synthetic:{i}"),
            labels: labels[i].clone(),
        })
        .collect();
    let split = DatasetSplit::from_items(
        "synthetic",
        items,
        spec.num_classes,
        Quota {
            query_per_class: spec.query_per_class,
            train_per_class: spec.train_per_class,
        },
        spec.seed,
    )?;
    Ok(SyntheticDataset {
        images: ImageSet {
            images,
            labels,
            ids: (0..total as u64).collect(),
            num_classes: spec.num_classes,
        },
        split,
    })
}
