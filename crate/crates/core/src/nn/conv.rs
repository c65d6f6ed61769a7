use ndarray::{Array2, Array4, ArrayView2, Axis, Ix2};
use rand::Rng;

use super::init::kaiming_normal;
use super::param::Param;
use super::Mode;

/// Output extent of a strided window sweep, or `None` when the padded input
/// is smaller than the window.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Debug)]
struct ConvCache {
    cols: Array2<f32>,
    input_dims: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

/// 2-D convolution lowered to a single GEMM over an im2col buffer.
///
/// The weight is stored pre-flattened as `(out_channels, in_channels * k * k)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<ConvCache>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::new(kaiming_normal(&[out_channels, fan_in], fan_in, rng));
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias: bias.then(|| Param::zeros(&[out_channels])),
            cache: None,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        self.weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("conv weight is 2-D")
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let ho = conv_out_len(h, self.kernel, self.stride, self.padding).expect("conv height");
        let wo = conv_out_len(w, self.kernel, self.stride, self.padding).expect("conv width");
        let x = x.as_standard_layout();
        let cols = im2col(
            x.as_slice().expect("standard layout"),
            (n, c, h, w),
            self.kernel,
            self.stride,
            self.padding,
            (ho, wo),
        );
        let mut out = self.weight_matrix().dot(&cols);
        if let Some(b) = &self.bias {
            for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(b.value.iter()) {
                row += bv;
            }
        }
        let y = channel_major_to_batch_major(&out, n, self.out_channels, ho, wo);
        if mode == Mode::Train {
            self.cache = Some(ConvCache {
                cols,
                input_dims: (n, c, h, w),
                out_hw: (ho, wo),
            });
        } else {
            self.cache = None;
        }
        y
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let cache = self.cache.take().expect("conv backward without train-mode forward");
        let (n, c, h, w) = cache.input_dims;
        let (ho, wo) = cache.out_hw;
        let g2 = batch_major_to_channel_major(grad, n, self.out_channels, ho, wo);

        let dw = g2.dot(&cache.cols.t());
        let mut wgrad = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("conv weight grad is 2-D");
        wgrad += &dw;
        if let Some(b) = &mut self.bias {
            for (gb, row) in b.grad.iter_mut().zip(g2.axis_iter(Axis(0))) {
                *gb += row.sum();
            }
        }

        let dcols = self.weight_matrix().t().dot(&g2);
        let dx = col2im(
            &dcols,
            (n, c, h, w),
            self.kernel,
            self.stride,
            self.padding,
            (ho, wo),
        );
        Array4::from_shape_vec((n, c, h, w), dx).expect("col2im shape")
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut())
    }
}

fn im2col(
    x: &[f32],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
) -> Array2<f32> {
    let width = n * ho * wo;
    let mut cols = vec![0.0f32; c * k * k * width];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * width..(row + 1) * width];
                for ni in 0..n {
                    let plane = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let base = (ni * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[base + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * k * k, width), cols).expect("im2col shape")
}

fn col2im(
    cols: &Array2<f32>,
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
) -> Vec<f32> {
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().expect("standard layout");
    let width = n * ho * wo;
    let mut x = vec![0.0f32; n * c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * width..(row + 1) * width];
                for ni in 0..n {
                    let plane = &mut x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let base = (ni * ho + oy) * wo;
                        for ox in 0..wo {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(F, N*H*W)` -> `(N, F, H, W)`.
fn channel_major_to_batch_major(m: &Array2<f32>, n: usize, f: usize, h: usize, w: usize) -> Array4<f32> {
    let m = m.as_standard_layout();
    let src = m.as_slice().expect("standard layout");
    let hw = h * w;
    let mut out = vec![0.0f32; n * f * hw];
    for fi in 0..f {
        for ni in 0..n {
            let s = &src[fi * n * hw + ni * hw..][..hw];
            out[(ni * f + fi) * hw..][..hw].copy_from_slice(s);
        }
    }
    Array4::from_shape_vec((n, f, h, w), out).expect("output shape")
}

/// `(N, F, H, W)` -> `(F, N*H*W)`.
fn batch_major_to_channel_major(g: &Array4<f32>, n: usize, f: usize, h: usize, w: usize) -> Array2<f32> {
    let g = g.as_standard_layout();
    let src = g.as_slice().expect("standard layout");
    let hw = h * w;
    let mut out = vec![0.0f32; n * f * hw];
    for ni in 0..n {
        for fi in 0..f {
            let s = &src[(ni * f + fi) * hw..][..hw];
            out[fi * n * hw + ni * hw..][..hw].copy_from_slice(s);
        }
    }
    Array2::from_shape_vec((f, n * hw), out).expect("grad shape")
}
