//! Dataset ingestion, retrieval split protocol, preprocessing and the
//! synthetic desk-scale dataset.

pub mod cifar;
mod dataset;
pub mod nuswide;
mod preprocess;
mod source;
mod split;
mod synthetic;

pub use dataset::ImageSet;
pub use preprocess::{augment_batch, resize_bilinear, Preprocess, IMAGENET_MEAN, IMAGENET_STD};
pub use source::{read_rgb, FileSource, ImageSource, InMemorySource};
pub use split::{quota_split, DatasetSplit, Quota, Role, SplitItem, MANIFEST_VERSION};
pub use synthetic::{make_synthetic, SyntheticDataset, SyntheticSpec};

/// Environment variable naming the directory that holds on-disk datasets.
pub const DATA_ROOT_ENV: &str = "HASHDISTILL_DATA_ROOT";
