//! Retrieval fine-tuning objectives for a hash head.

mod centers;
mod finetune;
mod losses;

pub use centers::{sylvester_hadamard, HashCenterSet, MAX_CENTER_ROUNDS};
pub use finetune::{finetune_retrieval, finetune_retrieval_resumable, FinetuneConfig, FinetuneOutcome, FinetuneProgress, Framework};
pub use losses::{csq_grad, csq_loss, dch_grad, dch_loss, LossTerms, PairwiseSimilarity};
