use ndarray::{Array1, Array4};

use super::param::Param;
use super::Mode;

#[derive(Clone, Debug)]
struct NormCache {
    normalized: Array4<f32>,
    inv_std: Array1<f32>,
}

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Training uses biased batch statistics and updates the running estimates
/// with the unbiased variance; evaluation uses the running estimates only.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<NormCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "batch norm channels");
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut out = vec![0.0f32; src.len()];

        match mode {
            Mode::Eval => {
                for ci in 0..c {
                    let inv = 1.0 / (self.running_var[ci] + self.eps).sqrt();
                    let scale = self.gamma.value[[ci]] * inv;
                    let shift = self.beta.value[[ci]] - self.running_mean[ci] * scale;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for i in base..base + hw {
                            out[i] = src[i] * scale + shift;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                let mut normalized = vec![0.0f32; src.len()];
                let mut inv_std = Array1::zeros(c);
                for ci in 0..c {
                    let mut sum = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        sum += src[base..base + hw].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mean = sum / m;
                    let mut sq = 0.0f64;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        sq += src[base..base + hw]
                            .iter()
                            .map(|&v| (v as f64 - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / m;
                    let inv = 1.0 / (var + self.eps as f64).sqrt();
                    inv_std[ci] = inv as f32;
                    let (g, b) = (self.gamma.value[[ci]], self.beta.value[[ci]]);
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for i in base..base + hw {
                            let xh = ((src[i] as f64 - mean) * inv) as f32;
                            normalized[i] = xh;
                            out[i] = g * xh + b;
                        }
                    }
                    let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
                    let mo = self.momentum;
                    self.running_mean[ci] = (1.0 - mo) * self.running_mean[ci] + mo * mean as f32;
                    self.running_var[ci] = (1.0 - mo) * self.running_var[ci] + mo * unbiased as f32;
                }
                self.cache = Some(NormCache {
                    normalized: Array4::from_shape_vec((n, c, h, w), normalized).expect("shape"),
                    inv_std,
                });
            }
        }
        Array4::from_shape_vec((n, c, h, w), out).expect("shape")
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let cache = self.cache.take().expect("batch norm backward without train-mode forward");
        let (n, c, h, w) = grad.dim();
        let g = grad.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let xh = cache.normalized.as_slice().expect("standard layout");
        let hw = h * w;
        let m = (n * hw) as f32;
        let mut dx = vec![0.0f32; gs.len()];
        for ci in 0..c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for i in base..base + hw {
                    sum_g += gs[i] as f64;
                    sum_gx += (gs[i] * xh[i]) as f64;
                }
            }
            self.gamma.grad[[ci]] += sum_gx as f32;
            self.beta.grad[[ci]] += sum_g as f32;
            let k = self.gamma.value[[ci]] * cache.inv_std[ci] / m;
            let (sg, sgx) = (sum_g as f32, sum_gx as f32);
            for ni in 0..n {
                let base = (ni * c + ci) * hw;
                for i in base..base + hw {
                    dx[i] = k * (m * gs[i] - sg - xh[i] * sgx);
                }
            }
        }
        Array4::from_shape_vec((n, c, h, w), dx).expect("shape")
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        [&self.gamma, &self.beta].into_iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        [&mut self.gamma, &mut self.beta].into_iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut bn = BatchNorm2d::new(2);
        let x = Array::from_shape_fn((3, 2, 2, 2), |(a, b, c, d)| (a * 8 + b * 4 + c * 2 + d) as f32);
        let y = bn.forward(&x, Mode::Train);
        for ci in 0..2 {
            let ch = y.index_axis(ndarray::Axis(1), ci);
            let mean = ch.mean().unwrap();
            let var = ch.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.value[[0]] = 1.5;
        bn.gamma.value[[1]] = -0.5;
        let x = Array::from_shape_fn((2, 2, 2, 3), |(a, b, c, d)| {
            (((a * 31 + b * 17 + c * 7 + d * 3) % 13) as f32 / 13.0) - 0.3
        });
        let r = Array::from_shape_fn(x.raw_dim(), |(a, b, c, d)| ((a + b * 2 + c * 3 + d) % 4) as f32 - 1.5);
        let mut probe = bn.clone();
        probe.forward(&x, Mode::Train);
        let dx = probe.backward(&r);
        let loss = |x: &Array4<f32>| {
            let mut b = bn.clone();
            (b.forward(x, Mode::Train) * &r).sum() as f64
        };
        let eps = 1e-2;
        for idx in [[0, 0, 0, 0], [1, 1, 1, 2], [0, 1, 0, 1]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps as f64);
            assert!((fd - dx[idx] as f64).abs() < 2e-2, "fd {fd} vs {}", dx[idx]);
        }
    }
}
