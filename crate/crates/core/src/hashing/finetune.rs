use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::centers::HashCenterSet;
use super::losses::{csq_grad, csq_loss, dch_grad, dch_loss, PairwiseSimilarity};
use crate::arch::HashModel;
use crate::data::{augment_batch, ImageSource};
use crate::nn::Mode;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::training::{epoch_rng, shuffled_batches, timed_epoch, EpochRecord};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Csq,
    Dch,
}

impl Framework {
    pub fn default_lambda_q(self) -> f64 {
        match self {
            Framework::Csq => 1e-4,
            Framework::Dch => 0.1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::Csq => "csq",
            Framework::Dch => "dch",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csq" => Ok(Framework::Csq),
            "dch" => Ok(Framework::Dch),
            other => Err(Error::Config(format!("unknown framework {other:?} (expected csq or dch)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub framework: Framework,
    pub n_bits: usize,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gamma: f64,
    /// Defaults per framework when unset.
    #[serde(default)]
    pub lambda_q: Option<f64>,
    pub augment: bool,
}

impl FinetuneConfig {
    pub fn new(framework: Framework, n_bits: usize) -> Self {
        FinetuneConfig {
            framework,
            n_bits,
            optimizer: OptimizerConfig::rmsprop(1e-5),
            epochs: 50,
            batch_size: 64,
            seed: 0,
            gamma: 20.0,
            lambda_q: None,
            augment: true,
        }
    }

    pub fn lambda_q(&self) -> f64 {
        self.lambda_q.unwrap_or_else(|| self.framework.default_lambda_q())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bits == 0 {
            return Err(Error::Config("n_bits must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("fine-tuning needs at least one epoch and a positive batch size".into()));
        }
        if self.framework == Framework::Dch && self.batch_size < 2 {
            return Err(Error::Config("DCH needs batches of at least 2 samples".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config("fine-tuning learning rate must be positive".into()));
        }
        if !(self.gamma > 0.0) || !(self.lambda_q() >= 0.0) {
            return Err(Error::Config("gamma must be positive and lambda_q non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneProgress {
    pub optimizer: Optimizer,
    pub history: Vec<EpochRecord>,
}

impl FinetuneProgress {
    pub fn new(config: &FinetuneConfig) -> Self {
        FinetuneProgress {
            optimizer: Optimizer::new(config.optimizer.clone()),
            history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub history: Vec<EpochRecord>,
    /// Centers used as CSQ targets.
    pub centers: Option<HashCenterSet>,
}

const FINETUNE_STREAM: u64 = 2;

/// Fine-tunes backbone and head together on labelled training images.
pub fn finetune_retrieval(
    model: &mut HashModel,
    images: &dyn ImageSource,
    labels: &[Vec<u32>],
    num_classes: usize,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    let mut progress = FinetuneProgress::new(config);
    finetune_retrieval_resumable(model, images, labels, num_classes, config, &mut progress, &mut |_, _| Ok(()))
}

pub fn finetune_retrieval_resumable(
    model: &mut HashModel,
    images: &dyn ImageSource,
    labels: &[Vec<u32>],
    num_classes: usize,
    config: &FinetuneConfig,
    progress: &mut FinetuneProgress,
    on_epoch: &mut dyn FnMut(&HashModel, &FinetuneProgress) -> Result<()>,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let n = images.len();
    if n == 0 || labels.len() != n {
        return Err(Error::Dataset(format!("fine-tuning needs one label set per image ({n} images, {} label sets)", labels.len())));
    }
    if model.n_bits() != config.n_bits {
        return Err(Error::Config(format!(
            "hash head has {} bits but the config asks for {}",
            model.n_bits(),
            config.n_bits
        )));
    }
    if let Some(bad) = labels.iter().flatten().find(|&&l| l as usize >= num_classes) {
        return Err(Error::Dataset(format!("label {bad} outside {num_classes} classes")));
    }
    let centers = match config.framework {
        Framework::Csq => {
            let c = HashCenterSet::generate(num_classes, config.n_bits, config.seed)?;
            if labels.iter().any(Vec::is_empty) {
                return Err(Error::Dataset("CSQ needs at least one label per training image".into()));
            }
            Some(c)
        }
        Framework::Dch => None,
    };
    let lambda_q = config.lambda_q();

    for epoch in progress.history.len()..config.epochs {
        let record = timed_epoch(epoch, || {
            let mut rng = epoch_rng(config.seed, epoch, FINETUNE_STREAM);
            let batches = shuffled_batches(n, config.batch_size, &mut rng);
            let mut total = 0.0;
            let mut seen = 0usize;
            for idx in &batches {
                if config.framework == Framework::Dch && idx.len() < 2 {
                    continue;
                }
                let mut x = images.batch(idx)?;
                if config.augment {
                    let pad = x.dim().2 / 8;
                    augment_batch(&mut x, pad, &mut rng);
                }
                let batch_labels: Vec<Vec<u32>> = idx.iter().map(|&i| labels[i].clone()).collect();
                model.zero_grad();
                let h = model.forward(&x, Mode::Train)?.mapv(f64::from);
                let (loss, grad) = match &centers {
                    Some(c) => {
                        let t = c.targets(&batch_labels)?;
                        (csq_loss(h.view(), t.view(), lambda_q)?, csq_grad(h.view(), t.view(), lambda_q)?)
                    }
                    None => {
                        let sim = PairwiseSimilarity::from_labels(&batch_labels);
                        (
                            dch_loss(h.view(), &sim, config.gamma, lambda_q)?,
                            dch_grad(h.view(), &sim, config.gamma, lambda_q)?,
                        )
                    }
                };
                total += loss.total() * idx.len() as f64;
                seen += idx.len();
                model.backward(&grad.mapv(|v| v as f32));
                progress.optimizer.step(&mut model.params_mut());
            }
            Ok(total / seen.max(1) as f64)
        })?;
        log::info!(
            "finetune {} epoch {} loss {:.6} ({:.2}s)",
            config.framework,
            epoch + 1,
            record.loss,
            record.seconds
        );
        progress.history.push(record);
        on_epoch(model, progress)?;
    }
    Ok(FinetuneOutcome {
        history: progress.history.clone(),
        centers,
    })
}
