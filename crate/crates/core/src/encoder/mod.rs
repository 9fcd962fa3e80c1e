//! Reference encoders, optimizer and the training loop.

mod augment;
mod checkpoint;
mod model;
mod optim;
mod tokenizer;
mod train;

pub use augment::aug_image;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use model::{encode_image, encode_text, EncoderGrads, EncoderParams, ImageForward, ModelDims, TextForward};
pub use optim::{adamw_step, AdamWHyper, OptState};
pub use tokenizer::{TokenSeq, Tokenizer, BOS, EOS, PAD};
pub use train::{
    forward_backward, train, write_metrics_csv, StepMetrics, TrainConfig, TrainMode, TrainOutput, METRICS_HEADER,
};

use crate::contrastive::LossError;
use crate::dataset::DatasetError;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("projection output for row {0} is the zero vector")]
    ZeroNorm(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGrad(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Loss(#[from] LossError),
}
