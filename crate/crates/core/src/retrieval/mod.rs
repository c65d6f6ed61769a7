//! Binary codes, Hamming ranking and mean average precision.

mod codes;
mod metrics;
mod rank;

pub use codes::{binarize_row, words_for, CodeMatrix, CodeRef, CODE_FILE_MAGIC, CODE_FILE_VERSION};
pub use metrics::{
    average_precision_at_n, expected_random_ap, is_relevant, map_at_n, random_baseline_map,
    random_baseline_map_from_labels, top_k_listing, MapResult,
};
pub use rank::{hamming_distance, hamming_rank, RankedEntry, RankedList};
