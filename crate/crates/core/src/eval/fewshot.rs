use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::zeroshot::argmax;
use super::EvalError;
use crate::util::{derive_seed, rng_from_seed, Rng};

pub const DEFAULT_EPISODES: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub n_query: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 5,
            n_query: 15,
        }
    }
}

/// Support and query rows are class-major; labels are episode-local
/// (`0..way`), with `classes[k]` the dataset label of local class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub classes: Vec<usize>,
    pub support: Array2<f64>,
    pub support_labels: Vec<usize>,
    pub query: Array2<f64>,
    pub query_labels: Vec<usize>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum FewShotMethod {
    #[default]
    Prototypical,
    /// Distance-weighted vote over all support samples.
    WeightedKnn,
}

fn class_index(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    by_class
}

fn check_pool(by_class: &BTreeMap<usize, Vec<usize>>, spec: &EpisodeSpec) -> Result<(), EvalError> {
    if spec.way < 2 || spec.shot == 0 || spec.n_query == 0 {
        return Err(EvalError::InvalidArgument(format!("bad episode shape {spec:?}")));
    }
    if by_class.len() < spec.way {
        return Err(EvalError::TooFewClasses {
            have: by_class.len(),
            need: spec.way,
        });
    }
    let need = spec.shot + spec.n_query;
    if let Some((&class, idx)) = by_class.iter().find(|(_, idx)| idx.len() < need) {
        return Err(EvalError::InsufficientSamples {
            class,
            have: idx.len(),
            need,
        });
    }
    Ok(())
}

fn draw(
    features: ArrayView2<'_, f64>,
    by_class: &BTreeMap<usize, Vec<usize>>,
    spec: &EpisodeSpec,
    rng: &mut Rng,
) -> Episode {
    let all: Vec<usize> = by_class.keys().copied().collect();
    let classes: Vec<usize> = sample(rng, all.len(), spec.way).into_iter().map(|i| all[i]).collect();
    let need = spec.shot + spec.n_query;
    let mut support_rows = Vec::with_capacity(spec.way * spec.shot);
    let mut query_rows = Vec::with_capacity(spec.way * spec.n_query);
    for c in &classes {
        let pool = &by_class[c];
        let picked: Vec<usize> = sample(rng, pool.len(), need).into_iter().map(|i| pool[i]).collect();
        support_rows.extend_from_slice(&picked[..spec.shot]);
        query_rows.extend_from_slice(&picked[spec.shot..]);
    }
    Episode {
        support: features.select(Axis(0), &support_rows),
        support_labels: (0..spec.way).flat_map(|k| std::iter::repeat_n(k, spec.shot)).collect(),
        query: features.select(Axis(0), &query_rows),
        query_labels: (0..spec.way).flat_map(|k| std::iter::repeat_n(k, spec.n_query)).collect(),
        classes,
    }
}

/// `way` classes without replacement, then `shot + n_query` distinct samples
/// of each. Every class in `labels` must have enough samples.
pub fn sample_episode(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    spec: &EpisodeSpec,
    rng: &mut Rng,
) -> Result<Episode, EvalError> {
    if features.nrows() != labels.len() {
        return Err(EvalError::ShapeMismatch(format!("{} rows vs {} labels", features.nrows(), labels.len())));
    }
    let by_class = class_index(labels);
    check_pool(&by_class, spec)?;
    Ok(draw(features, &by_class, spec, rng))
}

/// Rows scaled to unit length; zero rows stay zero.
fn l2_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
    out
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn accuracy(pred: impl Iterator<Item = usize>, labels: &[usize]) -> f64 {
    let correct = pred.zip(labels).filter(|(p, l)| p == *l).count();
    correct as f64 / labels.len() as f64
}

/// Nearest prototype (mean of normalized support rows) by squared distance.
pub fn prototypical_accuracy(episode: &Episode) -> f64 {
    let support = l2_rows(&episode.support);
    let query = l2_rows(&episode.query);
    let way = episode.way();
    let mut protos = Array2::<f64>::zeros((way, support.ncols()));
    let mut counts = vec![0usize; way];
    for (row, &l) in support.axis_iter(Axis(0)).zip(&episode.support_labels) {
        protos.row_mut(l).scaled_add(1.0, &row);
        counts[l] += 1;
    }
    for (mut p, &n) in protos.axis_iter_mut(Axis(0)).zip(&counts) {
        p.mapv_inplace(|v| v / n as f64);
    }
    let pred = query
        .axis_iter(Axis(0))
        .map(|q| argmax(protos.axis_iter(Axis(0)).map(|p| -sq_dist(q, p))));
    accuracy(pred, &episode.query_labels)
}

/// Every support sample votes for its class with weight `1 / (d² + 1e-12)`.
pub fn weighted_knn_accuracy(episode: &Episode) -> f64 {
    let support = l2_rows(&episode.support);
    let query = l2_rows(&episode.query);
    let pred = query.axis_iter(Axis(0)).map(|q| {
        let mut votes = Array1::<f64>::zeros(episode.way());
        for (s, &l) in support.axis_iter(Axis(0)).zip(&episode.support_labels) {
            votes[l] += 1.0 / (sq_dist(q, s) + 1e-12);
        }
        argmax(votes.iter().copied())
    });
    accuracy(pred, &episode.query_labels)
}

/// Mean and 95% half-width `1.96 * s / sqrt(n)` with the sample standard deviation.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // Shifted by the first value so equal inputs give exactly zero spread.
    let shift = values[0];
    let offset = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    let mean = shift + offset;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - shift - offset).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewShotResult {
    pub mean: f64,
    pub ci: f64,
    pub episodes: usize,
    pub accuracies: Vec<f64>,
}

/// Episode `i` draws from its own stream `derive_seed(seed, "episode", i)`.
pub fn fewshot_eval(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    spec: &EpisodeSpec,
    episodes: usize,
    seed: u64,
    method: FewShotMethod,
) -> Result<FewShotResult, EvalError> {
    if episodes == 0 {
        return Err(EvalError::InvalidArgument("episodes must be at least 1".into()));
    }
    if features.nrows() != labels.len() {
        return Err(EvalError::ShapeMismatch(format!("{} rows vs {} labels", features.nrows(), labels.len())));
    }
    let by_class = class_index(labels);
    check_pool(&by_class, spec)?;
    let accuracies: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let ep = draw(features, &by_class, spec, &mut rng_from_seed(derive_seed(seed, "episode", i as u64)));
            match method {
                FewShotMethod::Prototypical => prototypical_accuracy(&ep),
                FewShotMethod::WeightedKnn => weighted_knn_accuracy(&ep),
            }
        })
        .collect();
    let (mean, ci) = mean_ci(&accuracies);
    Ok(FewShotResult {
        mean,
        ci,
        episodes,
        accuracies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn blobs(classes: usize, per: usize) -> (Array2<f64>, Vec<usize>) {
        let d = classes;
        let x = Array2::from_shape_fn((classes * per, d), |(i, j)| if i / per == j { 1.0 } else { 0.0 });
        (x, (0..classes * per).map(|i| i / per).collect())
    }

    #[test]
    fn default_shape() {
        let (x, y) = blobs(6, 20);
        let ep = sample_episode(x.view(), &y, &EpisodeSpec::default(), &mut rng_from_seed(1)).unwrap();
        assert_eq!(ep.support.nrows(), 25);
        assert_eq!(ep.query.nrows(), 75);
        let again = sample_episode(x.view(), &y, &EpisodeSpec::default(), &mut rng_from_seed(1)).unwrap();
        assert_eq!(ep, again);
        assert_eq!(prototypical_accuracy(&ep), 1.0);
        assert_eq!(weighted_knn_accuracy(&ep), 1.0);
    }

    #[test]
    fn short_class_errors() {
        let (x, mut y) = blobs(6, 20);
        for l in y.iter_mut().skip(40).take(10) {
            *l = 99;
        }
        let err = sample_episode(x.view(), &y, &EpisodeSpec::default(), &mut rng_from_seed(0)).unwrap_err();
        assert!(matches!(err, EvalError::InsufficientSamples { class: 2, have: 10, need: 20 }));
    }

    #[test]
    fn hand_placed_two_way() {
        // Prototypes after normalization: (1,0) and (0,1).
        let ep = Episode {
            classes: vec![0, 1],
            support: array![[2.0, 0.0], [0.0, 3.0]],
            support_labels: vec![0, 1],
            query: array![[0.9, 0.1], [0.2, 0.8], [1.0, 1.0], [0.6, 0.4]],
            query_labels: vec![0, 1, 1, 1],
        };
        // Third query is equidistant and goes to class 0; fourth is nearer class 0.
        assert_eq!(prototypical_accuracy(&ep), 0.5);
    }

    #[test]
    fn ci_cases() {
        assert_eq!(mean_ci(&[0.7; 600]), (0.7, 0.0));
        let alt: Vec<f64> = (0..600).map(|i| (i % 2) as f64).collect();
        let (m, ci) = mean_ci(&alt);
        assert_eq!(m, 0.5);
        assert!((ci - 0.040041714475826405).abs() < 1e-15);
    }

    #[test]
    fn separable_eval_is_perfect() {
        let (x, y) = blobs(8, 25);
        let r = fewshot_eval(x.view(), &y, &EpisodeSpec::default(), 50, 3, FewShotMethod::Prototypical).unwrap();
        assert_eq!((r.mean, r.ci), (1.0, 0.0));
    }
}
