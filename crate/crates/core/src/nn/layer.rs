use ndarray::{Array1, Array4};

use super::conv::Conv2d;
use super::linear::Linear;
use super::norm::BatchNorm2d;
use super::param::Param;
use super::pool::{GlobalAvgPool, MaxPool2d};
use super::Mode;

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Array4<f32>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        if mode == Mode::Train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let mask = self.mask.take().expect("relu backward without train-mode forward");
        grad * &mask
    }
}

/// `(N, C, H, W)` -> `(N, C*H*W, 1, 1)`, row-major over `(C, H, W)`.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    dims: Option<(usize, usize, usize, usize)>,
}

impl Flatten {
    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        self.dims = Some((n, c, h, w));
        x.as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c * h * w, 1, 1))
            .expect("flatten")
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let dims = self.dims.take().expect("flatten backward without forward");
        grad.as_standard_layout()
            .into_owned()
            .into_shape_with_order(dims)
            .expect("unflatten")
    }
}

/// Residual unit: `relu(body(x) + shortcut(x))`, with an identity shortcut
/// when `shortcut` is empty.
#[derive(Clone, Debug)]
pub struct Residual {
    pub body: Vec<Layer>,
    pub shortcut: Vec<Layer>,
    out_relu: Relu,
}

impl Residual {
    pub fn new(body: Vec<Layer>, shortcut: Vec<Layer>) -> Self {
        Residual {
            body,
            shortcut,
            out_relu: Relu::default(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let main = run_forward(&mut self.body, x, mode);
        let skip = if self.shortcut.is_empty() {
            x.clone()
        } else {
            run_forward(&mut self.shortcut, x, mode)
        };
        self.out_relu.forward(&(main + skip), mode)
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let g = self.out_relu.backward(grad);
        let dx_main = run_backward(&mut self.body, &g);
        let dx_skip = if self.shortcut.is_empty() {
            g
        } else {
            run_backward(&mut self.shortcut, &g)
        };
        dx_main + dx_skip
    }
}

/// One node of an instantiated network.
#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    Norm(BatchNorm2d),
    Relu(Relu),
    MaxPool(MaxPool2d),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Linear(Linear),
    Residual(Box<Residual>),
}

impl Layer {
    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        match self {
            Layer::Conv(l) => l.forward(x, mode),
            Layer::Norm(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x, mode),
            Layer::MaxPool(l) => l.forward(x, mode),
            Layer::GlobalAvgPool(l) => l.forward(x, mode),
            Layer::Flatten(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x, mode),
            Layer::Residual(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::Norm(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::MaxPool(l) => l.backward(grad),
            Layer::GlobalAvgPool(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad),
            Layer::Residual(l) => l.backward(grad),
        }
    }

    /// Visits trainable parameters in a fixed depth-first order.
    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            Layer::Conv(l) => l.params().for_each(f),
            Layer::Norm(l) => l.params().for_each(f),
            Layer::Linear(l) => l.params().for_each(f),
            Layer::Residual(r) => {
                r.body.iter().chain(&r.shortcut).for_each(|l| l.visit_params(f));
            }
            _ => {}
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Param)) {
        match self {
            Layer::Conv(l) => l.params_mut().for_each(f),
            Layer::Norm(l) => l.params_mut().for_each(f),
            Layer::Linear(l) => l.params_mut().for_each(f),
            Layer::Residual(r) => {
                let r = &mut **r;
                r.body
                    .iter_mut()
                    .chain(r.shortcut.iter_mut())
                    .for_each(|l| l.visit_params_mut(f));
            }
            _ => {}
        }
    }

    /// Visits non-trainable state (running statistics) in a fixed order.
    pub fn visit_buffers_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Array1<f32>)) {
        match self {
            Layer::Norm(l) => {
                f(&mut l.running_mean);
                f(&mut l.running_var);
            }
            Layer::Residual(r) => {
                let r = &mut **r;
                r.body
                    .iter_mut()
                    .chain(r.shortcut.iter_mut())
                    .for_each(|l| l.visit_buffers_mut(f));
            }
            _ => {}
        }
    }

    pub fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Array1<f32>)) {
        match self {
            Layer::Norm(l) => {
                f(&l.running_mean);
                f(&l.running_var);
            }
            Layer::Residual(r) => r.body.iter().chain(&r.shortcut).for_each(|l| l.visit_buffers(f)),
            _ => {}
        }
    }
}

pub fn run_forward(layers: &mut [Layer], x: &Array4<f32>, mode: Mode) -> Array4<f32> {
    let mut h = x.clone();
    for l in layers.iter_mut() {
        h = l.forward(&h, mode);
    }
    h
}

pub fn run_backward(layers: &mut [Layer], grad: &Array4<f32>) -> Array4<f32> {
    let mut g = grad.clone();
    for l in layers.iter_mut().rev() {
        g = l.backward(&g);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn residual_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let body = vec![
            Layer::Conv(Conv2d::new(2, 2, 3, 1, 1, false, &mut rng)),
            Layer::Relu(Relu::default()),
            Layer::Conv(Conv2d::new(2, 2, 3, 1, 1, false, &mut rng)),
        ];
        let block = Residual::new(body, vec![]);
        let x = Array::from_shape_fn((1, 2, 4, 4), |(_, b, c, d)| ((b * 16 + c * 4 + d) % 7) as f32 / 7.0 - 0.45);
        let r = Array::from_shape_fn(x.raw_dim(), |(_, b, c, d)| ((b + c + 2 * d) % 3) as f32 - 1.0);
        let mut probe = block.clone();
        probe.forward(&x, Mode::Train);
        let dx = probe.backward(&r);
        let loss = |x: &Array4<f32>| (block.clone().forward(x, Mode::Eval) * &r).sum() as f64;
        let eps = 1e-3;
        for idx in [[0, 0, 1, 1], [0, 1, 3, 2], [0, 0, 0, 3]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps as f64);
            assert!((fd - dx[idx] as f64).abs() < 1e-2, "fd {fd} vs {}", dx[idx]);
        }
    }
}
