use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::cache::FeatureCache;
use super::loss::{kd_loss_grad, kd_loss_view, FeatureBatch, FeatureSource};
use crate::arch::Network;
use crate::data::{augment_batch, ImageSource};
use crate::nn::Mode;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::training::{epoch_rng, shuffled_batches, timed_epoch, EpochRecord};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Flip + crop augmentation; off by default.
    #[serde(default)]
    pub augment: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            optimizer: OptimizerConfig::adam(1e-4),
            epochs: 160,
            batch_size: 64,
            seed: 0,
            augment: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("distillation learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("distillation needs at least one epoch and a positive batch size".into()));
        }
        Ok(())
    }
}

/// A teacher network whose weights cannot be reached mutably; it only
/// produces inference-mode features.
#[derive(Clone, Debug)]
pub struct FrozenTeacher {
    net: Network,
}

impl FrozenTeacher {
    pub fn new(net: Network) -> Self {
        FrozenTeacher { net }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn feature_dim(&self) -> usize {
        self.net.feature_dim()
    }

    pub fn checksum(&self) -> String {
        self.net.checksum()
    }

    pub fn features(&mut self, images: &Array4<f32>) -> Result<Array2<f32>> {
        self.net.forward(images, Mode::Eval)
    }
}

/// Source of teacher features: a live frozen network or a precomputed cache
/// whose rows align with the training images.
#[derive(Clone, Debug)]
pub enum Teacher {
    Model(FrozenTeacher),
    Cached { identity: String, cache: FeatureCache },
}

impl Teacher {
    pub fn feature_dim(&self) -> usize {
        match self {
            Teacher::Model(t) => t.feature_dim(),
            Teacher::Cached { cache, .. } => cache.dim(),
        }
    }

    /// Weight checksum for live teachers, content checksum for caches.
    pub fn checksum(&self) -> String {
        match self {
            Teacher::Model(t) => t.checksum(),
            Teacher::Cached { cache, .. } => {
                use sha2::{Digest, Sha256};
                let mut h = Sha256::new();
                for v in cache.features.iter() {
                    h.update(v.to_le_bytes());
                }
                h.finalize().iter().map(|b| format!("{b:02x}")).collect()
            }
        }
    }
}

/// Inference-mode features of `images`, computed in chunks of `batch_size`.
pub fn extract_features(model: &mut Network, images: &dyn ImageSource, batch_size: usize) -> Result<FeatureBatch> {
    let feats = forward_chunked(model, images, batch_size)?;
    Ok(FeatureBatch::from_f32(&feats, FeatureSource::Student))
}

pub(crate) fn forward_chunked(model: &mut Network, images: &dyn ImageSource, batch_size: usize) -> Result<Array2<f32>> {
    let (c, h, w) = images.item_shape();
    model.check_input((1, c, h, w))?;
    let n = images.len();
    let mut out = Array2::zeros((n, model.feature_dim()));
    let mut start = 0;
    while start < n {
        let end = (start + batch_size.max(1)).min(n);
        let chunk = images.batch(&(start..end).collect::<Vec<_>>())?;
        let f = model.forward(&chunk, Mode::Eval)?;
        out.slice_axis_mut(Axis(0), (start..end).into()).assign(&f);
        start = end;
    }
    Ok(out)
}

/// Optimizer state and loss history carried across (possibly resumed) runs.
#[derive(Clone, Debug)]
pub struct KdProgress {
    pub optimizer: Optimizer,
    pub history: Vec<EpochRecord>,
}

impl KdProgress {
    pub fn new(config: &DistillConfig) -> Self {
        KdProgress {
            optimizer: Optimizer::new(config.optimizer.clone()),
            history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KdOutcome {
    pub history: Vec<EpochRecord>,
    pub teacher_checksum_before: String,
    pub teacher_checksum_after: String,
}

const KD_STREAM: u64 = 1;

/// Trains `student` to regress the teacher's features over `images`,
/// ignoring labels.
pub fn train_kd(teacher: &mut Teacher, student: &mut Network, images: &dyn ImageSource, config: &DistillConfig) -> Result<KdOutcome> {
    let mut progress = KdProgress::new(config);
    train_kd_resumable(teacher, student, images, config, &mut progress, &mut |_, _| Ok(()))
}

/// Runs the epochs not yet recorded in `progress`, calling `on_epoch`
/// after each one.
pub fn train_kd_resumable(
    teacher: &mut Teacher,
    student: &mut Network,
    images: &dyn ImageSource,
    config: &DistillConfig,
    progress: &mut KdProgress,
    on_epoch: &mut dyn FnMut(&Network, &KdProgress) -> Result<()>,
) -> Result<KdOutcome> {
    config.validate()?;
    let n = images.len();
    if n == 0 {
        return Err(Error::Dataset("distillation dataset is empty".into()));
    }
    if teacher.feature_dim() != student.feature_dim() {
        return Err(Error::Shape(format!(
            "teacher feature dim {} != student feature dim {}",
            teacher.feature_dim(),
            student.feature_dim()
        )));
    }
    let (c, h, w) = images.item_shape();
    student.check_input((1, c, h, w))?;
    let before = teacher.checksum();

    // Without augmentation the frozen teacher sees each image exactly once.
    let precomputed: Option<Array2<f32>> = match (&mut *teacher, config.augment) {
        (Teacher::Cached { cache, .. }, false) => {
            if cache.len() != n {
                return Err(Error::Shape(format!("feature cache has {} rows for {n} images", cache.len())));
            }
            Some(cache.features.clone())
        }
        (Teacher::Cached { .. }, true) => {
            return Err(Error::Config("augmentation needs a live teacher, not a feature cache".into()));
        }
        (Teacher::Model(t), false) => Some(forward_chunked(&mut t.net, images, config.batch_size)?),
        (Teacher::Model(_), true) => None,
    };

    for epoch in progress.history.len()..config.epochs {
        let record = timed_epoch(epoch, || {
            let mut rng = epoch_rng(config.seed, epoch, KD_STREAM);
            let batches = shuffled_batches(n, config.batch_size, &mut rng);
            let mut total = 0.0;
            for idx in &batches {
                let mut x = images.batch(idx)?;
                let target = match (&precomputed, &mut *teacher) {
                    (Some(all), _) => all.select(Axis(0), idx),
                    (None, Teacher::Model(t)) => {
                        let pad = x.dim().2 / 8;
                        augment_batch(&mut x, pad, &mut rng);
                        t.features(&x)?
                    }
                    (None, Teacher::Cached { .. }) => unreachable!("rejected above"),
                };
                student.zero_grad();
                let s = student.forward(&x, Mode::Train)?;
                let s = FeatureBatch::from_f32(&s, FeatureSource::Student);
                let t = FeatureBatch::from_f32(&target, FeatureSource::Teacher);
                total += kd_loss_view(t.values.view(), s.values.view())? * idx.len() as f64;
                let g = kd_loss_grad(&t, &s)?.mapv(|v| v as f32);
                student.backward(&g);
                progress.optimizer.step(&mut student.params_mut());
            }
            Ok(total / n as f64)
        })?;
        log::info!("distill epoch {} loss {:.6} ({:.2}s)", epoch + 1, record.loss, record.seconds);
        progress.history.push(record);
        on_epoch(student, progress)?;
    }

    Ok(KdOutcome {
        history: progress.history.clone(),
        teacher_checksum_before: before,
        teacher_checksum_after: teacher.checksum(),
    })
}
