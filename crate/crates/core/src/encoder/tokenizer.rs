use serde::{Deserialize, Serialize};

use crate::util::stable_hash;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
const FIRST_WORD_ID: u64 = 3;

/// Fixed-length token ids: `bos, words..., eos, pad...`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
}

impl TokenSeq {
    pub fn context_len(&self) -> usize {
        self.ids.len()
    }

    /// Ids up to and including `eos`.
    pub fn non_pad(&self) -> &[u32] {
        let end = self.ids.iter().position(|&t| t == EOS).map_or(self.ids.len(), |p| p + 1);
        &self.ids[..end]
    }
}

/// Hashing word tokenizer: words are maximal alphanumeric runs of the
/// lowercased text; word id = `3 + xxh64(word) mod (vocab_size - 3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub vocab_size: usize,
    pub context_len: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            vocab_size: 49_408,
            context_len: 77,
        }
    }
}

impl Tokenizer {
    pub fn new(vocab_size: usize, context_len: usize) -> Self {
        assert!(vocab_size > 3, "vocab_size must exceed the 3 special ids");
        assert!(context_len >= 2, "context_len must fit bos and eos");
        Self {
            vocab_size,
            context_len,
        }
    }

    pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
    }

    pub fn word_id(&self, word: &str) -> u32 {
        (FIRST_WORD_ID + stable_hash(word.as_bytes()) % (self.vocab_size as u64 - FIRST_WORD_ID)) as u32
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::with_capacity(self.context_len);
        ids.push(BOS);
        ids.extend(Self::words(text).take(self.context_len - 2).map(|w| self.word_id(&w)));
        ids.push(EOS);
        ids.resize(self.context_len, PAD);
        TokenSeq { ids }
    }
}
