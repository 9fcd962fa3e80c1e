use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::EvalError;
use crate::contrastive::normalize_rows;
use crate::dataset::instantiate;
use crate::encoder::{encode_image, encode_text, EncoderParams, Tokenizer};

/// Generic templates used when none are configured.
pub const DEFAULT_TEMPLATES: [&str; 7] = [
    "itap of a {class}.",
    "a bad photo of the {class}.",
    "a origami {class}.",
    "a photo of the large {class}.",
    "a {class} in a video game.",
    "art of the {class}.",
    "a photo of the small {class}.",
];

/// Maps captions to unit-norm embedding rows.
pub trait TextEncoder {
    fn encode(&self, texts: &[String]) -> Result<Array2<f64>, EvalError>;
}

impl<F> TextEncoder for F
where
    F: Fn(&[String]) -> Result<Array2<f64>, EvalError>,
{
    fn encode(&self, texts: &[String]) -> Result<Array2<f64>, EvalError> {
        self(texts)
    }
}

pub struct ModelTextEncoder<'a> {
    pub params: &'a EncoderParams,
    pub tokenizer: Tokenizer,
}

impl TextEncoder for ModelTextEncoder<'_> {
    fn encode(&self, texts: &[String]) -> Result<Array2<f64>, EvalError> {
        embed_texts(self.params, &self.tokenizer, texts)
    }
}

pub fn embed_texts(params: &EncoderParams, tokenizer: &Tokenizer, texts: &[String]) -> Result<Array2<f64>, EvalError> {
    let tokens: Vec<_> = texts.iter().map(|t| tokenizer.tokenize(t)).collect();
    Ok(encode_text(params, &tokens)?.embeddings.into_inner())
}

pub fn embed_images(params: &EncoderParams, features: ArrayView2<'_, f64>) -> Result<Array2<f64>, EvalError> {
    Ok(encode_image(params, features)?.embeddings.into_inner())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotClassifier {
    /// One unit-norm row per class.
    pub class_matrix: Array2<f64>,
    pub class_names: Vec<String>,
    pub templates: Vec<String>,
}

impl ZeroShotClassifier {
    /// Argmax of `class_matrix · x`, lowest class index on ties.
    pub fn predict(&self, embeddings: ArrayView2<'_, f64>) -> Result<Vec<usize>, EvalError> {
        if embeddings.ncols() != self.class_matrix.ncols() {
            return Err(EvalError::ShapeMismatch(format!(
                "embedding dim {} vs class dim {}",
                embeddings.ncols(),
                self.class_matrix.ncols()
            )));
        }
        let scores = embeddings.dot(&self.class_matrix.t());
        Ok(scores.axis_iter(Axis(0)).map(|row| argmax(row.iter().copied())).collect())
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Per class: embed every instantiated template, average, re-normalize.
pub fn build_zeroshot_classifier(
    class_names: &[String],
    templates: &[String],
    encoder: &dyn TextEncoder,
) -> Result<ZeroShotClassifier, EvalError> {
    if class_names.len() < 2 {
        return Err(EvalError::TooFewClasses {
            have: class_names.len(),
            need: 2,
        });
    }
    if templates.is_empty() {
        return Err(EvalError::InvalidArgument("no templates".into()));
    }
    if let Some(t) = templates.iter().find(|t| !t.contains("{class}")) {
        return Err(EvalError::InvalidTemplate(t.clone()));
    }
    let mut rows: Vec<Array1<f64>> = Vec::with_capacity(class_names.len());
    for (c, name) in class_names.iter().enumerate() {
        let texts: Vec<String> = templates.iter().map(|t| instantiate(t, name)).collect();
        let emb = encoder.encode(&texts)?;
        if emb.nrows() != texts.len() {
            return Err(EvalError::ShapeMismatch(format!("encoder returned {} rows for {}", emb.nrows(), texts.len())));
        }
        let mean = emb.mean_axis(Axis(0)).expect("non-empty");
        if mean.dot(&mean).sqrt() < 1e-12 {
            return Err(EvalError::ZeroNorm(c));
        }
        rows.push(mean);
    }
    let dim = rows[0].len();
    let stacked = Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j]);
    let class_matrix = normalize_rows(stacked.view())
        .map_err(|_| EvalError::ZeroNorm(0))?
        .into_inner();
    Ok(ZeroShotClassifier {
        class_matrix,
        class_names: class_names.to_vec(),
        templates: templates.to_vec(),
    })
}

pub fn zeroshot_accuracy(
    classifier: &ZeroShotClassifier,
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<f64, EvalError> {
    if embeddings.nrows() != labels.len() || labels.is_empty() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} embeddings vs {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    let c = classifier.class_matrix.nrows();
    if let Some(l) = labels.iter().find(|&&l| l >= c) {
        return Err(EvalError::ShapeMismatch(format!("label {l} out of range for {c} classes")));
    }
    let pred = classifier.predict(embeddings)?;
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn fixture(texts: &[String]) -> Result<Array2<f64>, EvalError> {
        // "neg" templates map to the negated class axis.
        let mut out = Array2::zeros((texts.len(), 3));
        for (i, t) in texts.iter().enumerate() {
            let c: usize = t.split('c').next_back().unwrap().trim_end_matches('.').parse().unwrap();
            out[[i, c]] = if t.starts_with("neg") { -1.0 } else { 1.0 };
        }
        Ok(out)
    }

    #[test]
    fn single_and_repeated_templates() {
        let one = build_zeroshot_classifier(&names(3), &["a {class}".into()], &fixture).unwrap();
        assert_eq!(one.class_matrix, Array2::<f64>::eye(3));
        let two = build_zeroshot_classifier(&names(3), &["a {class}".into(), "b {class}".into()], &fixture).unwrap();
        assert_eq!(two.class_matrix, Array2::<f64>::eye(3));
        let err = build_zeroshot_classifier(&names(3), &["a {class}".into(), "neg {class}".into()], &fixture);
        assert!(matches!(err, Err(EvalError::ZeroNorm(0))));
        assert!(matches!(
            build_zeroshot_classifier(&names(3), &["none".into()], &fixture),
            Err(EvalError::InvalidTemplate(_))
        ));
    }

    #[test]
    fn prediction_and_ties() {
        let clf = ZeroShotClassifier {
            class_matrix: Array2::eye(3),
            class_names: names(3),
            templates: vec![],
        };
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let x = array![[0.0, 0.0, 1.0], [h, h, 0.0]];
        assert_eq!(clf.predict(x.view()).unwrap(), vec![2, 0]);
        assert_eq!(zeroshot_accuracy(&clf, x.view(), &[2, 1]).unwrap(), 0.5);
        assert!(zeroshot_accuracy(&clf, x.view(), &[2, 3]).is_err());
    }
}
