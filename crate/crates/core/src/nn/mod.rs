//! Minimal layer library with explicit forward/backward passes over
//! `(N, C, H, W)` activations.
//!
//! Every layer caches what its backward pass needs during a
//! [`Mode::Train`] forward call; [`Mode::Eval`] forwards keep no state and
//! use running statistics for normalization.

mod conv;
mod init;
mod layer;
mod linear;
mod norm;
mod param;
mod pool;

pub use conv::{conv_out_len, Conv2d};
pub use init::{fan_in_uniform, kaiming_normal};
pub use layer::{run_backward, run_forward, Flatten, Layer, Relu, Residual};
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use param::Param;
pub use pool::{GlobalAvgPool, MaxPool2d};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
