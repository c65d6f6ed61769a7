use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Channel statistics of the ImageNet pretraining distribution.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Resize-then-normalize transform applied to `[0, 1]` images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub size: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Preprocess {
    pub fn imagenet(size: usize) -> Self {
        Preprocess {
            size,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }

    pub fn apply(&self, images: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = images.dim();
        assert_eq!(c, 3, "preprocess expects RGB");
        let mut out = Array4::zeros((n, c, self.size, self.size));
        for (i, img) in images.axis_iter(Axis(0)).enumerate() {
            let resized = if (h, w) == (self.size, self.size) {
                img.to_owned()
            } else {
                resize_bilinear(img, self.size, self.size)
            };
            let mut dst = out.index_axis_mut(Axis(0), i);
            for ch in 0..3 {
                let (m, sd) = (self.mean[ch], self.std[ch]);
                dst.index_axis_mut(Axis(0), ch)
                    .zip_mut_with(&resized.index_axis(Axis(0), ch), |d, &v| *d = (v - m) / sd);
            }
        }
        out
    }
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, h, w) = img.dim();
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    let mut out = Array3::zeros((c, out_h, out_w));
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f32;
            for ch in 0..c {
                let top = img[[ch, y0, x0]] * (1.0 - dx) + img[[ch, y0, x1]] * dx;
                let bot = img[[ch, y1, x0]] * (1.0 - dx) + img[[ch, y1, x1]] * dx;
                out[[ch, oy, ox]] = top * (1.0 - dy) + bot * dy;
            }
        }
    }
    out
}

/// Random horizontal flip and zero-padded random crop (translation by up to
/// `pad` pixels), applied per image in place.
pub fn augment_batch<R: Rng + ?Sized>(batch: &mut Array4<f32>, pad: usize, rng: &mut R) {
    let (_, _, h, w) = batch.dim();
    for mut img in batch.axis_iter_mut(Axis(0)) {
        if rng.random_bool(0.5) {
            let flipped = img.slice(s![.., .., ..;-1]).to_owned();
            img.assign(&flipped);
        }
        if pad == 0 {
            continue;
        }
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        if dy == 0 && dx == 0 {
            continue;
        }
        let src = img.to_owned();
        img.fill(0.0);
        let (h, w) = (h as isize, w as isize);
        let ys = (dy.max(0), (h + dy).min(h));
        let xs = (dx.max(0), (w + dx).min(w));
        if ys.0 >= ys.1 || xs.0 >= xs.1 {
            continue;
        }
        img.slice_mut(s![.., ys.0..ys.1, xs.0..xs.1]).assign(&src.slice(s![
            ..,
            ys.0 - dy..ys.1 - dy,
            xs.0 - dx..xs.1 - dx
        ]));
    }
}
