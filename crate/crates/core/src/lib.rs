//! Compact hashing models for image retrieval.
//!
//! The pipeline has two stages. A compact residual student first learns to
//! regress the last-layer features of a frozen, generically pretrained
//! teacher ([`distill`]). The student alone is then fine-tuned with a hash
//! head under a central-similarity or Cauchy pairwise objective
//! ([`hashing`]), and retrieval quality is measured with Hamming ranking and
//! mAP@N ([`retrieval`]).

pub mod arch;
pub mod data;
pub mod distill;
pub mod experiment;
pub mod hashing;
pub mod nn;
pub mod optim;
pub mod retrieval;
pub mod training;

mod error;

pub use error::{Error, Result};
