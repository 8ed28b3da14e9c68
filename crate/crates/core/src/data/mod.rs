//! Dataset ingestion, splitting, batching and synthetic data.

pub mod dataset;
pub mod idx;

pub use dataset::{gen_blobs, load_mnist, make_batches, split_validation, BatchPlan, Dataset, Split};
pub use idx::{parse_idx, read_idx, IdxData};
