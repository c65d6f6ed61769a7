use ndarray::Array4;

use super::conv::conv_out_len;
use super::Mode;

/// Max pooling with implicit negative-infinity padding.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    argmax: Option<(Vec<usize>, (usize, usize, usize, usize))>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            argmax: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let ho = conv_out_len(h, self.kernel, self.stride, self.padding).expect("pool height");
        let wo = conv_out_len(w, self.kernel, self.stride, self.padding).expect("pool width");
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut out = vec![0.0f32; n * c * ho * wo];
        let mut arg = vec![0usize; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = base;
                    for ki in 0..self.kernel {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..self.kernel {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = base + iy as usize * w + ix as usize;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (plane * ho + oy) * wo + ox;
                    out[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        self.argmax = (mode == Mode::Train).then_some((arg, (n, c, h, w)));
        Array4::from_shape_vec((n, c, ho, wo), out).expect("pool shape")
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (arg, dims) = self.argmax.take().expect("pool backward without train-mode forward");
        let g = grad.as_standard_layout();
        let mut dx = vec![0.0f32; dims.0 * dims.1 * dims.2 * dims.3];
        for (&i, &gv) in arg.iter().zip(g.iter()) {
            dx[i] += gv;
        }
        Array4::from_shape_vec(dims, dx).expect("pool grad shape")
    }
}

/// Mean over the spatial extent, producing `(N, C, 1, 1)`.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    input_dims: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let area = (h * w) as f32;
        let y = Array4::from_shape_fn((n, c, 1, 1), |(ni, ci, _, _)| {
            x.slice(ndarray::s![ni, ci, .., ..]).sum() / area
        });
        self.input_dims = (mode == Mode::Train).then_some((n, c, h, w));
        y
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let dims = self.input_dims.take().expect("avg pool backward without train-mode forward");
        let area = (dims.2 * dims.3) as f32;
        Array4::from_shape_fn(dims, |(ni, ci, _, _)| grad[[ni, ci, 0, 0]] / area)
    }
}
