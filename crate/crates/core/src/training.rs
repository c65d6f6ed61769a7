//! Shared pieces of the training loops: seeded per-epoch shuffling and
//! per-epoch records.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Mean loss and wall-clock time of one pass over the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

/// RNG for `(seed, epoch, stream)`; independent of how many epochs ran
/// before, so resumed runs replay identically.
pub fn epoch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(0x9e37_79b9).wrapping_add(epoch as u64 + 1));
    rng
}

pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Times `body`, which returns the epoch's mean loss.
pub fn timed_epoch<F>(epoch: usize, body: F) -> crate::Result<EpochRecord>
where
    F: FnOnce() -> crate::Result<f64>,
{
    let start = Instant::now();
    let loss = body()?;
    Ok(EpochRecord {
        epoch,
        loss,
        seconds: start.elapsed().as_secs_f64(),
    })
}
