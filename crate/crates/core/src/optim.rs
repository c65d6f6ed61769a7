//! First-order optimizers operating on a stable-ordered parameter list.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nn::Param;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Rmsprop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            weight_decay: 0.0,
            momentum: 0.0,
        }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Rmsprop,
            ..OptimizerConfig::adam(learning_rate)
        }
    }

    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            weight_decay: 0.0,
            momentum,
        }
    }
}

/// Optimizer state. Slots are matched to parameters by position, so callers
/// must always pass parameters in the same order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first: Vec<ArrayD<f32>>,
    second: Vec<ArrayD<f32>>,
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const RMS_ALPHA: f32 = 0.99;
const EPS: f32 = 1e-8;

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let lr = self.config.learning_rate as f32;
        let wd = self.config.weight_decay as f32;
        let t = self.step as i32;

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Param { value, grad } = &mut **p;
            let value = value.as_slice_mut().expect("contiguous param");
            let grad = grad.as_slice().expect("contiguous grad");
            let m = m.as_slice_mut().expect("contiguous state");
            let v = v.as_slice_mut().expect("contiguous state");
            match self.config.kind {
                OptimizerKind::Sgd => {
                    let mu = self.config.momentum as f32;
                    for i in 0..value.len() {
                        let g = grad[i] + wd * value[i];
                        m[i] = mu * m[i] + g;
                        value[i] -= lr * m[i];
                    }
                }
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - ADAM_BETA1.powi(t);
                    let bc2 = 1.0 - ADAM_BETA2.powi(t);
                    for i in 0..value.len() {
                        let g = grad[i] + wd * value[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        value[i] -= lr * mhat / (vhat.sqrt() + EPS);
                    }
                }
                OptimizerKind::Rmsprop => {
                    for i in 0..value.len() {
                        let g = grad[i] + wd * value[i];
                        v[i] = RMS_ALPHA * v[i] + (1.0 - RMS_ALPHA) * g * g;
                        value[i] -= lr * g / (v[i].sqrt() + EPS);
                    }
                }
            }
        }
    }

    /// Flattened moment buffers for checkpointing.
    pub fn state(&self) -> (u64, Vec<Vec<f32>>) {
        let mut out = Vec::with_capacity(self.first.len() * 2);
        for a in self.first.iter().chain(&self.second) {
            out.push(a.iter().copied().collect());
        }
        (self.step, out)
    }

    pub fn restore(&mut self, step: u64, buffers: Vec<Vec<f32>>, params: &[&Param]) -> crate::Result<()> {
        if buffers.is_empty() {
            self.step = step;
            return Ok(());
        }
        if buffers.len() != params.len() * 2 {
            return Err(crate::Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        let mut it = buffers.into_iter();
        let mut take = |p: &Param| -> crate::Result<ArrayD<f32>> {
            let b = it.next().expect("length checked");
            ArrayD::from_shape_vec(p.value.raw_dim(), b)
                .map_err(|_| crate::Error::Checkpoint("optimizer buffer shape".into()))
        };
        self.first = params.iter().map(|p| take(p)).collect::<crate::Result<_>>()?;
        self.second = params.iter().map(|p| take(p)).collect::<crate::Result<_>>()?;
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_descends(config: OptimizerConfig) {
        let mut p = Param::filled(&[3], 2.0);
        let mut opt = Optimizer::new(config);
        for _ in 0..200 {
            p.zero_grad();
            p.grad = p.value.mapv(|v| 2.0 * v);
            opt.step(&mut [&mut p]);
        }
        assert!(p.value.iter().all(|v| v.abs() < 1.0), "{:?}", p.value);
    }

    #[test]
    fn all_kinds_minimize_a_quadratic() {
        quadratic_descends(OptimizerConfig::adam(0.05));
        quadratic_descends(OptimizerConfig::rmsprop(0.01));
        quadratic_descends(OptimizerConfig::sgd(0.05, 0.9));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Param::filled(&[1], 1.0);
        p.grad.fill(0.3);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
        opt.step(&mut [&mut p]);
        assert!((p.value[[0]] - 0.99).abs() < 1e-6);
    }
}
