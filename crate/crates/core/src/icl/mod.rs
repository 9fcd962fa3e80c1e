//! In-context-learning caption rewriting: prompt construction, completion
//! backends, a persistent completion cache and the dataset driver.

mod backend;
mod cache;
mod prompt;
mod rewrite;

pub use backend::{CompletionBackend, CompletionRequest, CompletionResponse, FixtureBackend, HttpCompletion};
pub use cache::{cache_key, RewriteCache, RewriteCacheEntry};
pub use prompt::{build_prompt, postprocess_completion, MetaPair, MetaRegistry, PromptContext, Strategy, TASK_SENTENCE};
pub use rewrite::{rewrite_dataset, RewriteOptions, RewriteOutput, RewriteReport, DEFAULT_TEMPERATURE};

use crate::backend::BackendError;
use crate::dataset::DatasetError;

#[derive(Debug, thiserror::Error)]
pub enum IclError {
    #[error("unknown rewrite strategy {0:?}")]
    UnknownStrategy(String),
    #[error("query caption is empty")]
    EmptyQuery,
    #[error("completion is empty after post-processing")]
    EmptyRewrite,
    #[error("meta pair registry: {0}")]
    Registry(String),
    #[error("no strategies requested")]
    NoStrategies,
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("rewrite cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error("record {record_id}: gave up after {attempts} attempts: {source}")]
    Backend {
        record_id: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
