//! Transfer protocols: zero-shot classification, few-shot episodes and
//! linear probing, plus the JSON report.

mod fewshot;
mod linear;
mod report;
mod zeroshot;

pub use fewshot::{
    fewshot_eval, mean_ci, prototypical_accuracy, sample_episode, weighted_knn_accuracy, Episode, EpisodeSpec,
    FewShotMethod, FewShotResult, DEFAULT_EPISODES,
};
pub use linear::{
    lambda_grid, lbfgs_logreg, linear_probe_sweep, logreg_objective, LbfgsOptions, LbfgsResult, LogRegModel,
    ProbeResult, Split,
};
pub use report::{render_table, EvalReport};
pub use zeroshot::{
    build_zeroshot_classifier, embed_images, embed_texts, zeroshot_accuracy, ModelTextEncoder, TextEncoder,
    ZeroShotClassifier, DEFAULT_TEMPLATES,
};

use crate::encoder::EncoderError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("class {0}: template embeddings average to the zero vector")]
    ZeroNorm(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class {class} has {have} samples, episode needs {need}")]
    InsufficientSamples { class: usize, have: usize, need: usize },
    #[error("need at least {need} classes, found {have}")]
    TooFewClasses { have: usize, need: usize },
    #[error("template {0:?} has no {{class}} slot")]
    InvalidTemplate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}
