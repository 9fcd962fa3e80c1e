use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AugmentedRecord, DatasetError, FeatureStore};
use crate::util::{derive_seed, rng_from_seed, Rng};

pub const DEFAULT_CLASS_NAMES: &[&str] = &[
    "apple", "bicycle", "castle", "dolphin", "elephant", "falcon", "guitar", "harbor", "igloo", "jellyfish",
    "kettle", "lantern", "mushroom", "necklace", "octopus", "parrot", "quilt", "rocket", "saxophone", "tractor",
    "umbrella", "violin", "windmill", "xylophone", "yacht", "zebra", "anchor", "balloon", "cactus", "drum",
    "envelope", "feather", "giraffe", "hammock", "iceberg", "jaguar", "kayak", "lighthouse", "mailbox", "nest",
    "orchid", "penguin", "quarry", "raccoon", "scooter", "tulip", "unicycle", "volcano", "walrus", "yarn",
    "acorn", "beetle", "canoe", "dragonfly", "easel", "fountain", "glacier", "hedgehog", "island", "jukebox",
    "koala", "lobster", "meadow", "notebook",
];

/// Parameters of the synthetic paired dataset.
///
/// Class `c` has a mean direction `mu_c`; sample features are
/// `normalize(mu_c + noise_sigma * eps)`. Training captions come from
/// `caption_templates`; the `n_rewrites` rewrites of each training caption and
/// the shifted test captions come from `paraphrase_templates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub caption_templates: Vec<String>,
    pub paraphrase_templates: Vec<String>,
    pub noise_sigma: f64,
    pub n_rewrites: usize,
    pub test_fraction: f64,
    /// Gram-Schmidt the class means (needs `n_classes <= feature_dim`).
    pub orthogonalize: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 32,
            samples_per_class: 64,
            feature_dim: 64,
            caption_templates: [
                "a photo of a {class}.",
                "a picture of the {class}.",
                "an image showing a {class}.",
                "a close up of the {class}.",
            ]
            .map(String::from)
            .to_vec(),
            paraphrase_templates: [
                "this snapshot captures one {class} vividly",
                "someone framed my {class} beautifully here",
                "look at that lovely {class} there",
                "our {class}, seen from afar",
                "my friend drew some {class} yesterday",
            ]
            .map(String::from)
            .to_vec(),
            noise_sigma: 0.6,
            n_rewrites: 4,
            test_fraction: 0.25,
            orthogonalize: false,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        if self.samples_per_class < 2 {
            return bad("samples_per_class must be at least 2".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.caption_templates.is_empty() || self.paraphrase_templates.is_empty() {
            return bad("template lists must be non-empty".into());
        }
        if let Some(t) = self
            .caption_templates
            .iter()
            .chain(&self.paraphrase_templates)
            .find(|t| !t.contains("{class}"))
        {
            return bad(format!("template {t:?} has no {{class}} slot"));
        }
        if self.caption_templates.iter().any(|t| self.paraphrase_templates.contains(t)) {
            return bad("caption and paraphrase templates must be disjoint".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be a finite non-negative number".into());
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            return bad("test_fraction must lie in (0, 1)".into());
        }
        if self.orthogonalize && self.n_classes > self.feature_dim {
            return bad("orthogonalize needs n_classes <= feature_dim".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.n_classes)
            .map(|c| match DEFAULT_CLASS_NAMES.get(c) {
                Some(name) => name.to_string(),
                None => format!("object{c}"),
            })
            .collect()
    }

    fn test_count(&self) -> usize {
        ((self.samples_per_class as f64 * self.test_fraction).round() as usize).clamp(1, self.samples_per_class - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub class_names: Vec<String>,
    /// Training records: original caption plus `n_rewrites` paraphrase rewrites.
    pub train: Vec<AugmentedRecord>,
    /// Held-out records captioned with the training templates.
    pub test: Vec<AugmentedRecord>,
    /// The held-out records captioned with paraphrase templates only.
    pub test_shifted: Vec<AugmentedRecord>,
    pub features: FeatureStore,
    /// Record id to class index.
    pub labels: BTreeMap<String, usize>,
}

impl SyntheticData {
    pub fn labels_for(&self, records: &[AugmentedRecord]) -> Vec<usize> {
        records.iter().map(|r| self.labels[&r.id]).collect()
    }
}

pub fn instantiate(template: &str, class: &str) -> String {
    template.replace("{class}", class)
}

fn gaussian(rng: &mut Rng, dim: usize) -> Array1<f64> {
    Array1::from_iter((0..dim).map(|_| StandardNormal.sample(rng)))
}

fn class_means(spec: &SyntheticSpec, seed: u64) -> Vec<Array1<f64>> {
    let mut means: Vec<Array1<f64>> = (0..spec.n_classes)
        .map(|c| gaussian(&mut rng_from_seed(derive_seed(seed, "class-mean", c as u64)), spec.feature_dim))
        .collect();
    if spec.orthogonalize {
        let target = (spec.feature_dim as f64).sqrt();
        for c in 0..means.len() {
            for prev in 0..c {
                let proj = means[c].dot(&means[prev]);
                let p = means[prev].clone();
                means[c].scaled_add(-proj, &p);
            }
            let norm = means[c].dot(&means[c]).sqrt();
            means[c].mapv_inplace(|v| v / norm);
        }
        for m in &mut means {
            m.mapv_inplace(|v| v * target);
        }
    }
    means
}

/// Generates train/test caption sets and their image features.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData, DatasetError> {
    spec.validate()?;
    let names = spec.class_names();
    let means = class_means(spec, seed);
    let n_test = spec.test_count();
    let n_train = spec.samples_per_class - n_test;

    let total = spec.n_classes * spec.samples_per_class;
    let mut ids = Vec::with_capacity(total);
    let mut rows = Array2::<f64>::zeros((total, spec.feature_dim));
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut test_shifted = Vec::new();
    let mut labels = BTreeMap::new();

    for (c, name) in names.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let id = format!("c{c:03}-s{s:04}");
            let mut rng = rng_from_seed(derive_seed(seed, "sample", (c * spec.samples_per_class + s) as u64));
            let mut x = &means[c] + &(gaussian(&mut rng, spec.feature_dim) * spec.noise_sigma);
            let norm = x.dot(&x).sqrt();
            x.mapv_inplace(|v| v / norm);
            rows.row_mut(ids.len()).assign(&x);
            ids.push(id.clone());
            labels.insert(id.clone(), c);

            let caption = instantiate(spec.caption_templates.choose(&mut rng).expect("non-empty"), name);
            let mut record = AugmentedRecord::original(id.clone(), id.clone(), caption);
            if s < n_train {
                for _ in 0..spec.n_rewrites {
                    let t = spec.paraphrase_templates.choose(&mut rng).expect("non-empty");
                    record.push_rewrite(instantiate(t, name), "paraphrase", "synthetic");
                }
                train.push(record);
            } else {
                let shifted = instantiate(spec.paraphrase_templates.choose(&mut rng).expect("non-empty"), name);
                test_shifted.push(AugmentedRecord::original(id.clone(), id.clone(), shifted));
                test.push(record);
            }
        }
    }

    Ok(SyntheticData {
        class_names: names,
        train,
        test,
        test_shifted,
        features: FeatureStore::new(ids, rows)?,
        labels,
    })
}
