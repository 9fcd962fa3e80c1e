use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AugmentedRecord, DatasetError, FeatureStore};
use crate::encoder::{TokenSeq, Tokenizer};
use crate::textaug::sample_caption_index;
use crate::util::{derive_seed, record_seed, rng_from_seed};

/// Which caption(s) of each record enter a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionPolicy {
    /// Always `captions[0]`.
    Original,
    /// One caption drawn uniformly per record per epoch.
    Sample,
    /// Every caption, one text slot per caption index.
    All,
}

/// Record indices and caption choices for one batch, before any I/O.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSpec {
    pub indices: Vec<usize>,
    pub caption_indices: Vec<usize>,
}

/// Splits one epoch into batches. The permutation depends only on
/// `epoch_seed`; each record's caption draw depends only on `epoch_seed` and
/// its id. The final short batch is kept.
pub fn epoch_plan(
    records: &[AugmentedRecord],
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<BatchSpec>, DatasetError> {
    if batch_size == 0 {
        return Err(DatasetError::ZeroBatchSize);
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(epoch_seed, "permutation", 0)));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| BatchSpec {
            indices: chunk.to_vec(),
            caption_indices: chunk
                .iter()
                .map(|&i| {
                    let r = &records[i];
                    let mut rng = rng_from_seed(record_seed(epoch_seed, "caption", &r.id));
                    sample_caption_index(r, &mut rng)
                })
                .collect(),
        })
        .collect())
}

/// Paired image features and tokenized captions for one training step.
///
/// `texts[slot][row]`: a single slot except under [`CaptionPolicy::All`],
/// where slot `j` holds every record's `captions[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPairs {
    pub record_ids: Vec<String>,
    pub image_features: Array2<f64>,
    pub texts: Vec<Vec<TokenSeq>>,
    pub caption_indices: Vec<usize>,
}

impl BatchPairs {
    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    /// The single text slot of a one-slot batch.
    pub fn token_batch(&self) -> &[TokenSeq] {
        &self.texts[0]
    }
}

pub struct BatchIter<'a> {
    records: &'a [AugmentedRecord],
    features: &'a FeatureStore,
    tokenizer: &'a Tokenizer,
    policy: CaptionPolicy,
    plan: std::vec::IntoIter<BatchSpec>,
}

impl Iterator for BatchIter<'_> {
    type Item = Result<BatchPairs, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let spec = self.plan.next()?;
        Some(self.materialize(spec))
    }
}

impl BatchIter<'_> {
    fn materialize(&self, spec: BatchSpec) -> Result<BatchPairs, DatasetError> {
        let recs: Vec<&AugmentedRecord> = spec.indices.iter().map(|&i| &self.records[i]).collect();
        let refs: Vec<&str> = recs.iter().map(|r| r.image_ref.as_str()).collect();
        let image_features = self.features.gather(&refs)?;
        let tok = |text: &str| self.tokenizer.tokenize(text);
        let (texts, caption_indices) = match self.policy {
            CaptionPolicy::Original => (vec![recs.iter().map(|r| tok(&r.captions[0])).collect()], vec![0; recs.len()]),
            CaptionPolicy::Sample => (
                vec![recs
                    .iter()
                    .zip(&spec.caption_indices)
                    .map(|(r, &k)| tok(&r.captions[k]))
                    .collect()],
                spec.caption_indices.clone(),
            ),
            CaptionPolicy::All => {
                let slots = recs[0].captions.len();
                if let Some(r) = recs.iter().find(|r| r.captions.len() != slots) {
                    return Err(DatasetError::InvalidRecord {
                        id: r.id.clone(),
                        message: format!("expected {slots} captions like the rest of the batch"),
                    });
                }
                (
                    (0..slots).map(|j| recs.iter().map(|r| tok(&r.captions[j])).collect()).collect(),
                    vec![0; recs.len()],
                )
            }
        };
        Ok(BatchPairs {
            record_ids: recs.iter().map(|r| r.id.clone()).collect(),
            image_features,
            texts,
            caption_indices,
        })
    }
}

/// Streams one epoch of [`BatchPairs`].
pub fn batch_iter<'a>(
    records: &'a [AugmentedRecord],
    features: &'a FeatureStore,
    tokenizer: &'a Tokenizer,
    batch_size: usize,
    epoch_seed: u64,
    policy: CaptionPolicy,
) -> Result<BatchIter<'a>, DatasetError> {
    let plan = epoch_plan(records, batch_size, epoch_seed)?;
    Ok(BatchIter {
        records,
        features,
        tokenizer,
        policy,
        plan: plan.into_iter(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize, m: usize) -> Vec<AugmentedRecord> {
        (0..n)
            .map(|i| {
                let mut r = AugmentedRecord::original(format!("r{i}"), format!("r{i}"), format!("caption {i}"));
                for k in 0..m {
                    r.push_rewrite(format!("rewrite {k} of {i}"), "s", "b");
                }
                r
            })
            .collect()
    }

    #[test]
    fn five_records_batch_two() {
        let plan = epoch_plan(&records(5, 0), 2, 1).unwrap();
        let sizes: Vec<usize> = plan.iter().map(|b| b.indices.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn same_seed_same_stream() {
        let recs = records(17, 4);
        assert_eq!(epoch_plan(&recs, 4, 9).unwrap(), epoch_plan(&recs, 4, 9).unwrap());
    }

    #[test]
    fn epoch_covers_every_record_once() {
        let recs = records(23, 2);
        let mut seen: Vec<usize> = epoch_plan(&recs, 5, 3).unwrap().into_iter().flat_map(|b| b.indices).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(matches!(epoch_plan(&records(3, 0), 0, 0), Err(DatasetError::ZeroBatchSize)));
    }

    fn caption_choice_by_id(recs: &[AugmentedRecord], seed: u64) -> Vec<usize> {
        let mut by_idx = vec![0; recs.len()];
        for b in epoch_plan(recs, 2, seed).unwrap() {
            for (i, k) in b.indices.iter().zip(b.caption_indices) {
                by_idx[*i] = k;
            }
        }
        by_idx
    }

    #[test]
    fn caption_sequences_rarely_coincide() {
        // P(two independent epochs agree on all 5 uniform choices over 5 options) = (1/5)^5 = 3.2e-4.
        // Over 20,000 seed pairs: mean 6.4, sd ~2.53; accept up to mean + 6 sd.
        let recs = records(5, 4);
        let trials = 20_000u64;
        let same = (0..trials)
            .filter(|&t| caption_choice_by_id(&recs, 2 * t) == caption_choice_by_id(&recs, 2 * t + 1))
            .count();
        let mean = trials as f64 * 0.2f64.powi(5);
        assert!((same as f64) <= mean + 6.0 * mean.sqrt(), "{same}");
    }

    #[test]
    fn materialized_batches() {
        let recs = records(5, 2);
        let ids: Vec<String> = recs.iter().map(|r| r.image_ref.clone()).collect();
        let feats = FeatureStore::new(ids, Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64)).unwrap();
        let tok = Tokenizer::new(100, 8);
        let batches: Vec<_> = batch_iter(&recs, &feats, &tok, 2, 4, CaptionPolicy::All)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(batches.len(), 3);
        assert!(batches.iter().all(|b| !b.is_empty() && b.texts.len() == 3));
        let b = &batches[0];
        let row = recs.iter().position(|r| r.id == b.record_ids[0]).unwrap();
        assert_eq!(b.image_features.row(0), feats.get(&recs[row].image_ref).unwrap());
        assert_eq!(b.texts[1][0], tok.tokenize(&recs[row].captions[1]));
    }
}
