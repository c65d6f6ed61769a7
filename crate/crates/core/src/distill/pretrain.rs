//! Classification pretraining for stand-in teachers.
//!
//! Real runs consume teachers pretrained elsewhere; at desk scale a small
//! CNN is pretrained here on a different (source) dataset so that it never
//! sees the target data's labels.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::Network;
use crate::data::ImageSource;
use crate::nn::{Linear, Mode};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::training::{epoch_rng, shuffled_batches, timed_epoch, EpochRecord};
use crate::{Error, Result};

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Array2<f32>, targets: &[usize]) -> (f64, Array2<f32>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0f64;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[targets[i]] - max) as f64;
        for (j, e) in exps.iter().enumerate() {
            let p = e / z;
            let y = if j == targets[i] { 1.0 } else { 0.0 };
            grad[[i, j]] = ((p - y) / n as f64) as f32;
        }
    }
    (loss / n as f64, grad)
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub history: Vec<EpochRecord>,
    pub train_accuracy: f64,
}

pub struct PretrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Trains `net` plus a temporary linear classifier with softmax
/// cross-entropy on single-label data; the classifier is discarded.
pub fn pretrain_classifier(
    net: &mut Network,
    images: &dyn ImageSource,
    labels: &[usize],
    num_classes: usize,
    config: &PretrainConfig,
) -> Result<ClassifierOutcome> {
    let n = images.len();
    if n == 0 || labels.len() != n {
        return Err(Error::Dataset("classification pretraining needs one label per image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xc1a5);
    let mut head = Linear::new(net.feature_dim(), num_classes, true, &mut rng);
    let mut opt = Optimizer::new(config.optimizer.clone());
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let record = timed_epoch(epoch, || {
            let mut erng = epoch_rng(config.seed, epoch, 7);
            let mut total = 0.0;
            for idx in shuffled_batches(n, config.batch_size, &mut erng) {
                let x = images.batch(&idx)?;
                let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                net.zero_grad();
                head.params_mut().for_each(|p| p.zero_grad());
                let f = net.forward(&x, Mode::Train)?;
                let (b, d) = f.dim();
                let logits = head.forward(&f.into_shape_with_order((b, d, 1, 1)).expect("reshape"), Mode::Train);
                let logits = logits.into_shape_with_order((b, num_classes)).expect("reshape");
                let (loss, g) = softmax_cross_entropy(&logits, &y);
                total += loss * b as f64;
                let gf = head.backward(&g.into_shape_with_order((b, num_classes, 1, 1)).expect("reshape"));
                net.backward(&gf.into_shape_with_order((b, d)).expect("reshape"));
                let mut params = net.params_mut();
                params.extend(head.params_mut());
                opt.step(&mut params);
            }
            Ok(total / n as f64)
        })?;
        log::info!("pretrain epoch {} loss {:.4}", epoch + 1, record.loss);
        history.push(record);
    }

    let feats = super::train::forward_chunked(net, images, config.batch_size)?;
    let d = feats.ncols();
    let logits = head.forward(&feats.into_shape_with_order((n, d, 1, 1)).expect("reshape"), Mode::Eval);
    let logits = logits.into_shape_with_order((n, num_classes)).expect("reshape");
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            best.0 == y
        })
        .count();
    Ok(ClassifierOutcome {
        history,
        train_accuracy: correct as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = Array2::from_shape_vec((2, 3), vec![0.2f32, -0.5, 1.0, 0.0, 0.3, -0.1]).unwrap();
        let y = [2usize, 0];
        let (_, g) = softmax_cross_entropy(&logits, &y);
        let eps = 1e-3f32;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[[i, j]] += eps;
                let mut m = logits.clone();
                m[[i, j]] -= eps;
                let fd = (softmax_cross_entropy(&p, &y).0 - softmax_cross_entropy(&m, &y).0) / (2.0 * eps as f64);
                assert!((fd - g[[i, j]] as f64).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn uniform_logits_cost_log_classes() {
        let (l, _) = softmax_cross_entropy(&Array2::zeros((4, 5)), &[0, 1, 2, 3]);
        assert!((l - 5f64.ln()).abs() < 1e-9);
    }
}
