//! Dataset files, sharding, epoch batching and the synthetic paired-data generator.
//!
//! Every file starts with the [`FORMAT_HEADER`](crate::FORMAT_HEADER) line.
//! JSON-lines files are canonical: keys sorted, no insignificant whitespace,
//! one newline-terminated object per line.

mod batch;
mod features;
mod io;
mod record;
mod shard;
mod synthetic;

pub use batch::{batch_iter, epoch_plan, BatchIter, BatchPairs, BatchSpec, CaptionPolicy};
pub use features::FeatureStore;
pub(crate) use io::write_atomic;
pub use io::{
    ingest_captions, read_augmented, read_caption_lines, write_augmented, write_augmented_to, write_captions,
};
pub use record::{AugmentedRecord, CaptionRecord};
pub use shard::{shard, shard_index, shard_path, write_shards};
pub use synthetic::{gen_synthetic, instantiate, SyntheticData, SyntheticSpec, DEFAULT_CLASS_NAMES};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("unsupported format header {0:?}")]
    UnsupportedVersion(String),
    #[error("feature file: {0}")]
    FeatureFormat(String),
    #[error("no feature vector for {0:?}")]
    MissingFeature(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
