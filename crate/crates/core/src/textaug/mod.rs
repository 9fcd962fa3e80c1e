//! Text augmentation: uniform selection among a caption and its rewrites,
//! plus the EDA and back-translation baselines.

mod backtranslate;
mod eda;

pub use backtranslate::{
    back_translate, HttpTranslator, IdentityTranslator, Language, TranslationBackend, TranslationRequest,
    TranslationResponse, UppercaseTranslator,
};
pub use eda::{eda_augment, EdaOp, EdaParams, SynonymTable};

use rand::RngCore;

use crate::backend::BackendError;
use crate::dataset::AugmentedRecord;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TextAugError {
    #[error("input has no words")]
    EmptyInput,
    #[error("invalid EDA parameter {name}={value}: must lie in [0, 1]")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("synonym table line {line}: {message}")]
    SynonymTable { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("round trip through {0} produced an empty string")]
    EmptyTranslation(String),
}

/// Uniform index in `0..n` from exactly one 64-bit draw (multiply-shift, bias < n / 2^64).
pub(crate) fn one_draw_index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Picks `captions[k]` with `k ~ Uniform{0..=M}`.
///
/// Consumes exactly one `u64` from `rng`, so a record's choice in an epoch is a
/// pure function of the stream position.
pub fn sample_caption<'a, R: RngCore + ?Sized>(record: &'a AugmentedRecord, rng: &mut R) -> &'a str {
    &record.captions[sample_caption_index(record, rng)]
}

pub fn sample_caption_index<R: RngCore + ?Sized>(record: &AugmentedRecord, rng: &mut R) -> usize {
    one_draw_index(rng, record.captions.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_from_seed;

    fn record(m: usize) -> AugmentedRecord {
        let mut r = AugmentedRecord::original("r0", "img0", "a photo");
        for k in 0..m {
            r.push_rewrite(format!("rewrite {k}"), "test", "fixture");
        }
        r
    }

    #[test]
    fn m_zero_always_original() {
        let r = record(0);
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            assert_eq!(sample_caption(&r, &mut rng), "a photo");
        }
    }

    #[test]
    fn replayed_draw_selects_same_index() {
        let r = record(1);
        // Find a seed whose first draw maps to index 1 by replaying the stream.
        let seed = (0u64..)
            .find(|&s| {
                let mut probe = rng_from_seed(s);
                ((probe.next_u64() as u128 * 2) >> 64) == 1
            })
            .unwrap();
        let mut rng = rng_from_seed(seed);
        assert_eq!(sample_caption(&r, &mut rng), "rewrite 0");
    }

    #[test]
    fn consumes_exactly_one_draw() {
        let r = record(4);
        let mut a = rng_from_seed(11);
        let mut b = rng_from_seed(11);
        sample_caption(&r, &mut a);
        b.next_u64();
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
