use serde::{Deserialize, Serialize};

use super::DatasetError;

/// One line of a caption file. Field order is alphabetical so serialization is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionRecord {
    pub caption: String,
    pub id: String,
    pub image_ref: String,
}

/// An image reference with its original caption (`captions[0]`) and `M`
/// rewrites (`captions[1..]`). `rewrite_meta[k]` describes `captions[k + 1]`
/// as `(strategy, backend_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedRecord {
    pub captions: Vec<String>,
    pub id: String,
    pub image_ref: String,
    pub rewrite_meta: Vec<(String, String)>,
}

impl AugmentedRecord {
    pub fn original(id: impl Into<String>, image_ref: impl Into<String>, caption: impl Into<String>) -> Self {
        Self {
            captions: vec![caption.into()],
            id: id.into(),
            image_ref: image_ref.into(),
            rewrite_meta: Vec::new(),
        }
    }

    pub fn push_rewrite(&mut self, text: impl Into<String>, strategy: impl Into<String>, backend: impl Into<String>) {
        self.captions.push(text.into());
        self.rewrite_meta.push((strategy.into(), backend.into()));
    }

    /// Number of rewrites `M`.
    pub fn m(&self) -> usize {
        self.captions.len() - 1
    }

    pub fn original_caption(&self) -> &str {
        &self.captions[0]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |message: &str| DatasetError::InvalidRecord {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        if self.captions.is_empty() {
            return Err(bad("no captions"));
        }
        if let Some(k) = self.captions.iter().position(|c| c.trim().is_empty()) {
            return Err(bad(&format!("caption {k} is empty")));
        }
        if self.rewrite_meta.len() != self.captions.len() - 1 {
            return Err(bad("rewrite_meta length must equal the number of rewrites"));
        }
        Ok(())
    }
}

impl From<CaptionRecord> for AugmentedRecord {
    fn from(r: CaptionRecord) -> Self {
        AugmentedRecord::original(r.id, r.image_ref, r.caption)
    }
}
