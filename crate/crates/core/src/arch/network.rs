use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::shape::block_output;
use super::spec::{BlockKind, BlockSpec, ModelSpec, TensorShape};
use crate::nn::{
    run_backward, run_forward, BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, MaxPool2d, Mode,
    Param, Relu, Residual,
};
use crate::{Error, Result};

#[derive(Clone, Debug)]
struct NetStage {
    name: String,
    layers: Vec<Layer>,
}

/// A trainable model instantiated from a [`ModelSpec`].
#[derive(Clone, Debug)]
pub struct Network {
    spec: ModelSpec,
    stages: Vec<NetStage>,
}

fn conv_unit(
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    norm: bool,
    relu: bool,
    bias: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Layer> {
    let mut layers = vec![Layer::Conv(Conv2d::new(cin, cout, kernel, stride, padding, bias, rng))];
    if norm {
        layers.push(Layer::Norm(BatchNorm2d::new(cout)));
    }
    if relu {
        layers.push(Layer::Relu(Relu::default()));
    }
    layers
}

fn instantiate(block: &BlockSpec, input: TensorShape, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    let cin = input.channels;
    let f = block.filters;
    match block.kind {
        BlockKind::InitialModule | BlockKind::PlainConv => conv_unit(
            cin,
            f,
            block.kernel,
            block.stride,
            block.padding,
            block.has_norm,
            block.has_activation,
            block.has_bias,
            rng,
        ),
        BlockKind::MaxPool => vec![Layer::MaxPool(MaxPool2d::new(block.kernel, block.stride, block.padding))],
        BlockKind::BasicBlock => {
            let mut body = conv_unit(cin, f, 3, 1, 1, true, true, false, rng);
            body.extend(conv_unit(f, f, 3, 1, 1, true, false, false, rng));
            let shortcut = if cin != f {
                conv_unit(cin, f, 1, 1, 0, true, false, false, rng)
            } else {
                Vec::new()
            };
            vec![Layer::Residual(Box::new(Residual::new(body, shortcut)))]
        }
        BlockKind::Bottleneck => {
            let mid = f / 4;
            let mut body = conv_unit(cin, mid, 1, 1, 0, true, true, false, rng);
            body.extend(conv_unit(mid, mid, 3, block.stride, 1, true, true, false, rng));
            body.extend(conv_unit(mid, f, 1, 1, 0, true, false, false, rng));
            let shortcut = if block.stride != 1 || cin != f {
                conv_unit(cin, f, 1, block.stride, 0, true, false, false, rng)
            } else {
                Vec::new()
            };
            vec![Layer::Residual(Box::new(Residual::new(body, shortcut)))]
        }
        BlockKind::GlobalAvgPool => vec![Layer::GlobalAvgPool(GlobalAvgPool::default())],
        BlockKind::Flatten => vec![Layer::Flatten(Flatten::default())],
        BlockKind::Linear => {
            let mut layers = vec![Layer::Linear(Linear::new(input.numel(), f, block.has_bias, rng))];
            if block.has_activation {
                layers.push(Layer::Relu(Relu::default()));
            }
            layers
        }
    }
}

impl Network {
    /// Instantiates every block with seeded fan-in-scaled weights and
    /// unit/zero normalization parameters.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = spec.input;
        let mut stages = Vec::with_capacity(spec.stages.len());
        for stage in &spec.stages {
            let mut layers = Vec::new();
            for block in &stage.blocks {
                layers.extend(instantiate(block, shape, &mut rng));
                shape = block_output(block, shape).expect("validated spec");
            }
            stages.push(NetStage {
                name: stage.name.clone(),
                layers,
            });
        }
        Ok(Network {
            spec: spec.clone(),
            stages,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn check_input(&self, dims: (usize, usize, usize, usize)) -> Result<()> {
        let want = self.spec.input;
        if (dims.1, dims.2, dims.3) != (want.channels, want.height, want.width) {
            return Err(Error::Shape(format!(
                "model `{}` expects inputs of {}x{}x{}, got {}x{}x{}",
                self.spec.name, want.channels, want.height, want.width, dims.1, dims.2, dims.3
            )));
        }
        if dims.0 == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Flattened last-layer features, `(N, feature_dim)`.
    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array2<f32>> {
        self.check_input(x.dim())?;
        let mut h = x.clone();
        for stage in &mut self.stages {
            h = run_forward(&mut stage.layers, &h, mode);
        }
        let n = h.dim().0;
        Ok(h.into_shape_with_order((n, self.spec.feature_dim)).expect("flat features"))
    }

    /// Backpropagates `(N, feature_dim)` feature gradients, accumulating into
    /// parameter gradients, and returns the input gradient.
    pub fn backward(&mut self, grad: &Array2<f32>) -> Array4<f32> {
        let (n, d) = grad.dim();
        let mut g = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, d, 1, 1))
            .expect("reshape");
        for stage in self.stages.iter_mut().rev() {
            g = run_backward(&mut stage.layers, &g);
        }
        g
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for stage in &self.stages {
            for l in &stage.layers {
                l.visit_params(&mut |p| out.push(p));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            for l in &mut stage.layers {
                l.visit_params_mut(&mut |p| out.push(p));
            }
        }
        out
    }

    pub fn buffers(&self) -> Vec<&Array1<f32>> {
        let mut out = Vec::new();
        for stage in &self.stages {
            for l in &stage.layers {
                l.visit_buffers(&mut |b| out.push(b));
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Array1<f32>> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            for l in &mut stage.layers {
                l.visit_buffers_mut(&mut |b| out.push(b));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Trainable scalars, counted by walking the instantiated arrays.
    pub fn enumerate_parameters(&self) -> u64 {
        self.params().iter().map(|p| p.len() as u64).sum()
    }

    pub fn enumerate_stage_parameters(&self) -> Vec<(String, u64)> {
        self.stages
            .iter()
            .map(|s| {
                let mut n = 0u64;
                for l in &s.layers {
                    l.visit_params(&mut |p| n += p.len() as u64);
                }
                (s.name.clone(), n)
            })
            .collect()
    }

    /// SHA-256 over all parameters and running statistics.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for v in p.value.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for b in self.buffers() {
            for v in b.iter() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parameters followed by running statistics, each flattened.
    pub fn state(&self) -> Vec<Vec<f32>> {
        self.params()
            .iter()
            .map(|p| p.value.iter().copied().collect())
            .chain(self.buffers().iter().map(|b| b.to_vec()))
            .collect()
    }

    pub fn load_state(&mut self, state: &[Vec<f32>]) -> Result<()> {
        let n_params = self.params().len();
        let n_buffers = self.buffers().len();
        if state.len() != n_params + n_buffers {
            return Err(Error::Checkpoint(format!(
                "state has {} arrays, model `{}` needs {}",
                state.len(),
                self.spec.name,
                n_params + n_buffers
            )));
        }
        for (p, src) in self.params_mut().into_iter().zip(state) {
            if p.len() != src.len() {
                return Err(Error::Checkpoint("parameter length mismatch".into()));
            }
            p.value.iter_mut().zip(src).for_each(|(d, s)| *d = *s);
        }
        for (b, src) in self.buffers_mut().into_iter().zip(&state[n_params..]) {
            if b.len() != src.len() {
                return Err(Error::Checkpoint("buffer length mismatch".into()));
            }
            b.iter_mut().zip(src).for_each(|(d, s)| *d = *s);
        }
        Ok(())
    }
}

/// A backbone with an appended fully-connected hash layer of `n_bits` outputs.
#[derive(Clone, Debug)]
pub struct HashModel {
    pub backbone: Network,
    pub head: Linear,
}

/// Appends a freshly initialized `feature_dim -> n_bits` layer. The backbone
/// is moved in untouched.
pub fn attach_hash_head(backbone: Network, n_bits: usize, seed: u64) -> Result<HashModel> {
    if n_bits == 0 {
        return Err(Error::Config("hash head needs at least one bit".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4a5b_0000_0000_0000);
    let head = Linear::new(backbone.feature_dim(), n_bits, true, &mut rng);
    Ok(HashModel { backbone, head })
}

impl HashModel {
    pub fn n_bits(&self) -> usize {
        self.head.out_features
    }

    /// Real-valued head activations, `(N, n_bits)`.
    pub fn forward(&mut self, x: &Array4<f32>, mode: Mode) -> Result<Array2<f32>> {
        let f = self.backbone.forward(x, mode)?;
        let (n, d) = f.dim();
        let f4 = f.into_shape_with_order((n, d, 1, 1)).expect("reshape");
        let h = self.head.forward(&f4, mode);
        Ok(h.into_shape_with_order((n, self.n_bits())).expect("reshape"))
    }

    pub fn backward(&mut self, grad: &Array2<f32>) {
        let (n, k) = grad.dim();
        let g4 = grad
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, k, 1, 1))
            .expect("reshape");
        let gf = self.head.backward(&g4);
        let d = self.backbone.feature_dim();
        let gf = gf.into_shape_with_order((n, d)).expect("reshape");
        self.backbone.backward(&gf);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.backbone.params_mut();
        out.extend(self.head.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.backbone.params();
        out.extend(self.head.params());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn state(&self) -> Vec<Vec<f32>> {
        let mut s = self.backbone.state();
        s.extend(self.head.params().map(|p| p.value.iter().copied().collect()));
        s
    }

    pub fn load_state(&mut self, state: &[Vec<f32>]) -> Result<()> {
        let head_arrays = self.head.params().count();
        if state.len() < head_arrays {
            return Err(Error::Checkpoint("hash model state too short".into()));
        }
        let split = state.len() - head_arrays;
        self.backbone.load_state(&state[..split])?;
        for (p, src) in self.head.params_mut().zip(&state[split..]) {
            if p.len() != src.len() {
                return Err(Error::Checkpoint("hash head size mismatch".into()));
            }
            p.value.iter_mut().zip(src).for_each(|(d, s)| *d = *s);
        }
        Ok(())
    }
}
