//! Feature distillation from a frozen teacher into a student.

mod cache;
mod loss;
pub mod pretrain;
mod train;

pub use cache::{FeatureCache, FEATURE_CACHE_MAGIC, FEATURE_CACHE_VERSION};
pub use loss::{kd_loss, kd_loss_grad, kd_loss_view, FeatureBatch, FeatureSource};
pub(crate) use train::forward_chunked;
pub use train::{
    extract_features, train_kd, train_kd_resumable, DistillConfig, FrozenTeacher, KdOutcome, KdProgress, Teacher,
};
