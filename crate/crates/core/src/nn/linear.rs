use ndarray::{Array2, Array4, ArrayView2, Axis, Ix2};
use rand::Rng;

use super::init::fan_in_uniform;
use super::param::Param;
use super::Mode;

/// Fully-connected layer over `(N, D, 1, 1)` activations.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out_features, in_features)`
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Array2<f32>>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, bias: bool, rng: &mut R) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::new(fan_in_uniform(&[out_features, in_features], in_features, rng)),
            bias: bias.then(|| Param::new(fan_in_uniform(&[out_features], in_features, rng))),
            input: None,
        }
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D weight")
    }

    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Array4<f32> {
        let (n, d, h, w) = x.dim();
        assert_eq!(d * h * w, self.in_features, "linear input features");
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, self.in_features))
            .expect("flatten");
        let mut y = x2.dot(&self.weight_matrix().t());
        if let Some(b) = &self.bias {
            for mut row in y.axis_iter_mut(Axis(0)) {
                row += &b.value.view().into_dimensionality::<ndarray::Ix1>().expect("1-D bias");
            }
        }
        self.input = (mode == Mode::Train).then_some(x2);
        y.into_shape_with_order((n, self.out_features, 1, 1)).expect("reshape")
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let x = self.input.take().expect("linear backward without train-mode forward");
        let n = x.nrows();
        let g = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, self.out_features))
            .expect("grad reshape");
        let dw = g.t().dot(&x);
        let mut wg = self.weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-D");
        wg += &dw;
        if let Some(b) = &mut self.bias {
            for (gb, col) in b.grad.iter_mut().zip(g.axis_iter(Axis(1))) {
                *gb += col.sum();
            }
        }
        let dx = g.dot(&self.weight_matrix());
        dx.into_shape_with_order((n, self.in_features, 1, 1)).expect("reshape")
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut())
    }
}
