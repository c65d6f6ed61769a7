//! Fixture generators shared by the benchmarks.

use hashdistill::retrieval::CodeMatrix;
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random `k`-bit codes with single labels drawn from `classes`.
pub fn random_codes(n: usize, k: usize, classes: u32, seed: u64) -> CodeMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0f32..1.0));
    let labels = (0..n).map(|_| vec![rng.random_range(0..classes)]).collect();
    CodeMatrix::from_features(features.view(), (0..n as u64).collect(), labels).expect("valid codes")
}

pub fn random_images(n: usize, c: usize, side: usize, seed: u64) -> Array4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn((n, c, side, side), |_| rng.random_range(-1.0f32..1.0))
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}
