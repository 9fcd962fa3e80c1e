//! Language-augmented contrastive language-image pretraining at desk scale.
//!
//! The crate is organised around the training pipeline:
//!
//! - [`textaug`]: uniform rewrite sampling plus the EDA and back-translation baselines.
//! - [`icl`]: in-context-learning prompt construction, completion backends, the
//!   rewrite cache and dataset-scale rewriting.
//! - [`dataset`]: file formats, sharding, epoch batching and the synthetic paired-data generator.
//! - [`contrastive`]: symmetric InfoNCE, its text-augmented use and the multi-text loss,
//!   all with analytic gradients.
//! - [`encoder`]: tokenizer, reference encoders, AdamW with warmup + cosine decay, training.
//! - [`eval`]: zero-shot, few-shot (prototypical episodes) and linear-probe protocols.
//! - [`cli`]: the `laclip` command line.

pub mod backend;
pub mod cli;
pub mod contrastive;
pub mod dataset;
pub mod encoder;
pub mod eval;
pub mod icl;
pub mod textaug;
pub mod util;

pub use contrastive::{EmbeddingBatch, LossOutput, TemperatureParam};
pub use dataset::AugmentedRecord;

/// Leading line of every file format written by this crate.
pub const FORMAT_HEADER: &str = "#laclip-kit v1";
