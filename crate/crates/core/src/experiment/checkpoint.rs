use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{attach_hash_head, HashModel, ModelSpec, Network};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::training::EpochRecord;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Teacher,
    Distill,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub config: OptimizerConfig,
    pub step: u64,
    pub buffers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub stage: StageTag,
    pub config_hash: String,
    pub model: ModelSpec,
    /// Hash head width; absent for plain backbones.
    pub n_bits: Option<usize>,
    pub epochs_completed: usize,
    pub history: Vec<EpochRecord>,
    pub arrays: Vec<usize>,
    pub optimizer: Option<OptimizerHeader>,
}

/// Weights plus training state. Layout: magic, u32 version, u64 header
/// length, JSON header, then every array as little-endian f32 (weights
/// first, then optimizer buffers).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub weights: Vec<Vec<f32>>,
    pub optimizer_buffers: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn from_network(stage: StageTag, config_hash: &str, net: &Network, history: &[EpochRecord], opt: Option<&Optimizer>) -> Self {
        Self::build(stage, config_hash, net.spec().clone(), None, net.state(), history, opt)
    }

    pub fn from_hash_model(config_hash: &str, model: &HashModel, history: &[EpochRecord], opt: Option<&Optimizer>) -> Self {
        Self::build(
            StageTag::Finetune,
            config_hash,
            model.backbone.spec().clone(),
            Some(model.n_bits()),
            model.state(),
            history,
            opt,
        )
    }

    fn build(
        stage: StageTag,
        config_hash: &str,
        model: ModelSpec,
        n_bits: Option<usize>,
        weights: Vec<Vec<f32>>,
        history: &[EpochRecord],
        opt: Option<&Optimizer>,
    ) -> Self {
        let (optimizer, optimizer_buffers) = match opt {
            Some(o) => {
                let (step, bufs) = o.state();
                (
                    Some(OptimizerHeader {
                        config: o.config().clone(),
                        step,
                        buffers: bufs.iter().map(Vec::len).collect(),
                    }),
                    bufs,
                )
            }
            None => (None, Vec::new()),
        };
        Checkpoint {
            header: CheckpointHeader {
                stage,
                config_hash: config_hash.to_string(),
                model,
                n_bits,
                epochs_completed: history.len(),
                history: history.to_vec(),
                arrays: weights.iter().map(Vec::len).collect(),
                optimizer,
            },
            weights,
            optimizer_buffers,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for a in self.weights.iter().chain(&self.optimizer_buffers) {
            let mut buf = Vec::with_capacity(a.len() * 4);
            for v in a {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut fixed = [0u8; 16];
        r.read_exact(&mut fixed)
            .map_err(|_| Error::Checkpoint("file too short for a checkpoint header".into()))?;
        if &fixed[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(fixed[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(fixed[8..16].try_into().expect("8 bytes"));
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header)
            .map_err(|_| Error::Checkpoint("truncated checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        let mut read_arrays = |lens: &[usize]| -> Result<Vec<Vec<f32>>> {
            lens.iter()
                .map(|&n| {
                    let mut buf = vec![0u8; n * 4];
                    r.read_exact(&mut buf)
                        .map_err(|_| Error::Checkpoint("truncated checkpoint payload".into()))?;
                    Ok(buf
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect())
                })
                .collect()
        };
        let weights = read_arrays(&header.arrays)?;
        let opt_lens = header.optimizer.as_ref().map(|o| o.buffers.clone()).unwrap_or_default();
        let optimizer_buffers = read_arrays(&opt_lens)?;
        Ok(Checkpoint {
            header,
            weights,
            optimizer_buffers,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let f = std::fs::File::create(&tmp)?;
            self.write_to(std::io::BufWriter::new(f))?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn expect_stage(&self, stage: StageTag) -> Result<()> {
        if self.header.stage != stage {
            return Err(Error::Checkpoint(format!(
                "expected a {stage:?} checkpoint, found {:?}",
                self.header.stage
            )));
        }
        Ok(())
    }

    /// Refuses to continue a run whose configuration changed.
    pub fn expect_config_hash(&self, hash: &str) -> Result<()> {
        if self.header.config_hash != hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {}, current {}",
                &self.header.config_hash[..self.header.config_hash.len().min(12)],
                &hash[..hash.len().min(12)]
            )));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        if self.header.n_bits.is_some() {
            return Err(Error::Checkpoint("checkpoint holds a hash model, not a backbone".into()));
        }
        let mut net = Network::build(&self.header.model, 0)?;
        net.load_state(&self.weights)?;
        Ok(net)
    }

    pub fn hash_model(&self) -> Result<HashModel> {
        let bits = self
            .header
            .n_bits
            .ok_or_else(|| Error::Checkpoint("checkpoint has no hash head".into()))?;
        let mut model = attach_hash_head(Network::build(&self.header.model, 0)?, bits, 0)?;
        model.load_state(&self.weights)?;
        Ok(model)
    }

    /// Optimizer with restored moments, matched to `params` by position.
    pub fn optimizer(&self, params: &[&crate::nn::Param]) -> Result<Optimizer> {
        let h = self
            .header
            .optimizer
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no optimizer state".into()))?;
        let mut opt = Optimizer::new(h.config.clone());
        opt.restore(h.step, self.optimizer_buffers.clone(), params)?;
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{small_cnn_spec, TensorShape};

    fn net() -> Network {
        Network::build(&small_cnn_spec("t", TensorShape::new(3, 8, 8), [2, 2, 4], 3), 5).unwrap()
    }

    #[test]
    fn round_trip_preserves_weights_and_history() {
        let n = net();
        let hist = vec![EpochRecord { epoch: 0, loss: 1.5, seconds: 0.1 }];
        let ck = Checkpoint::from_network(StageTag::Distill, "abc", &n, &hist, None);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back.header, ck.header);
        assert_eq!(back.network().unwrap().checksum(), n.checksum());
        assert!(back.expect_config_hash("abd").is_err());
        assert!(back.expect_stage(StageTag::Finetune).is_err());
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
        assert!(back.hash_model().is_err());
    }

    #[test]
    fn hash_model_round_trip() {
        let m = attach_hash_head(net(), 8, 1).unwrap();
        let ck = Checkpoint::from_hash_model("h", &m, &[], None);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap().hash_model().unwrap();
        assert_eq!(back.state(), m.state());
        assert_eq!(back.n_bits(), 8);
    }
}
