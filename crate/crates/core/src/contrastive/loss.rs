use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{EmbeddingBatch, LossError, LossOutput, TemperatureParam};

/// Normalization of the image side of the multi-text loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSideScaling {
    /// Mean over the `N * (M + 1)` (image, text-slot) terms. Reduces to the
    /// plain symmetric loss at `M = 0`.
    #[default]
    Mean,
    /// Sum over records and slots divided by `M`, as the formula is usually
    /// printed. Only defined for `M >= 1`.
    Printed,
}

/// Row-wise softmax, stabilized by subtracting each row maximum.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// `LSE(values) - values[target]`. When the target is the maximum this is
/// `ln(1 + sum of the others)`, taken through `ln_1p` so small losses keep
/// their relative precision.
fn cross_entropy(values: ndarray::ArrayView1<'_, f64>, target: usize) -> f64 {
    let t = values[target];
    let max = values.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if t == max {
        let rest: f64 = values
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != target)
            .map(|(_, &v)| (v - t).exp())
            .sum();
        rest.ln_1p()
    } else {
        max - t + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
    }
}

/// Both directions of InfoNCE for one image/text pairing.
struct PairTerms {
    logits: Array2<f64>,
    l_image: f64,
    l_text: f64,
    /// d l_image / d logits
    d_image: Array2<f64>,
    /// d l_text / d logits
    d_text: Array2<f64>,
}

fn pair_terms(img: ArrayView2<'_, f64>, txt: ArrayView2<'_, f64>, scale: f64) -> PairTerms {
    let n = img.nrows();
    let inv_n = 1.0 / n as f64;
    let logits = img.dot(&txt.t()) * scale;

    let mut l_image = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        l_image += cross_entropy(row, i);
    }
    let mut l_text = 0.0;
    for (k, col) in logits.axis_iter(Axis(1)).enumerate() {
        l_text += cross_entropy(col, k);
    }

    let mut d_image = softmax_rows(logits.view());
    let mut d_text = softmax_rows(logits.t()).reversed_axes();
    for i in 0..n {
        d_image[[i, i]] -= 1.0;
        d_text[[i, i]] -= 1.0;
    }
    d_image.mapv_inplace(|v| v * inv_n);
    d_text.mapv_inplace(|v| v * inv_n);

    PairTerms {
        logits,
        l_image: l_image * inv_n,
        l_text: l_text * inv_n,
        d_image,
        d_text,
    }
}

fn check_pair(img: ArrayView2<'_, f64>, txt: ArrayView2<'_, f64>) -> Result<(), LossError> {
    if img.nrows() == 0 || img.ncols() == 0 {
        return Err(LossError::EmptyBatch);
    }
    if img.dim() != txt.dim() {
        return Err(LossError::ShapeMismatch(format!(
            "image batch is {:?}, text batch is {:?}",
            img.dim(),
            txt.dim()
        )));
    }
    Ok(())
}

/// Symmetric InfoNCE: `total = (l_image + l_text) / 2`, each side a mean over the batch.
pub fn clip_loss_and_grads(
    img: &EmbeddingBatch,
    txt: &EmbeddingBatch,
    temp: &TemperatureParam,
) -> Result<LossOutput, LossError> {
    clip_loss_unchecked(img.view(), txt.view(), temp.s)
}

/// [`clip_loss_and_grads`] on arbitrary matrices; rows are not required to be
/// unit norm. Used by finite-difference checks, which perturb off the sphere.
pub fn clip_loss_unchecked(
    img: ArrayView2<'_, f64>,
    txt: ArrayView2<'_, f64>,
    s: f64,
) -> Result<LossOutput, LossError> {
    check_pair(img, txt)?;
    let scale = s.exp();
    let t = pair_terms(img, txt, scale);

    // d total / d logits
    let g = (&t.d_image + &t.d_text) * 0.5;
    let grad_s = Zip::from(&g).and(&t.logits).fold(0.0, |acc, &a, &b| acc + a * b);
    let d_sim = g * scale;
    Ok(LossOutput {
        l_image: t.l_image,
        l_text: t.l_text,
        total: 0.5 * (t.l_image + t.l_text),
        grad_image: d_sim.dot(&txt),
        grad_text: d_sim.t().dot(&img),
        grad_s,
    })
}

/// Multi-positive loss pairing every image with the original caption and all
/// `M` rewrites. Negatives for text slot `j` come from slot `j` of the other
/// records; the text side uses each of the `N * (M + 1)` texts as an anchor
/// against all `N` images.
pub fn multitext_loss_and_grads(
    img: &EmbeddingBatch,
    txts: &[EmbeddingBatch],
    temp: &TemperatureParam,
    scaling: ImageSideScaling,
) -> Result<LossOutput, LossError> {
    let views: Vec<_> = txts.iter().map(EmbeddingBatch::view).collect();
    multitext_loss_unchecked(img.view(), &views, temp.s, scaling)
}

pub fn multitext_loss_unchecked(
    img: ArrayView2<'_, f64>,
    txts: &[ArrayView2<'_, f64>],
    s: f64,
    scaling: ImageSideScaling,
) -> Result<LossOutput, LossError> {
    if txts.is_empty() {
        return Err(LossError::EmptyTextList);
    }
    for txt in txts {
        check_pair(img, *txt)?;
    }
    let (n, d) = img.dim();
    let slots = txts.len();
    let m = slots - 1;
    let scale = s.exp();

    let text_weight = 1.0 / slots as f64;
    let image_weight = match scaling {
        ImageSideScaling::Mean => text_weight,
        ImageSideScaling::Printed if m == 0 => return Err(LossError::PrintedScalingNeedsRewrites),
        ImageSideScaling::Printed => n as f64 / m as f64,
    };

    let mut l_image = 0.0;
    let mut l_text = 0.0;
    let mut grad_s = 0.0;
    let mut grad_image = Array2::<f64>::zeros((n, d));
    let mut grad_text = Array2::<f64>::zeros((n * slots, d));

    for (j, txt) in txts.iter().enumerate() {
        let t = pair_terms(img, *txt, scale);
        l_image += t.l_image;
        l_text += t.l_text;

        let g = (t.d_image * image_weight + t.d_text * text_weight) * 0.5;
        grad_s += Zip::from(&g).and(&t.logits).fold(0.0, |acc, &a, &b| acc + a * b);
        let d_sim = g * scale;
        grad_image += &d_sim.dot(txt);
        grad_text
            .slice_mut(ndarray::s![j * n..(j + 1) * n, ..])
            .assign(&d_sim.t().dot(&img));
    }

    let l_image = l_image * image_weight;
    let l_text = l_text * text_weight;
    Ok(LossOutput {
        l_image,
        l_text,
        total: 0.5 * (l_image + l_text),
        grad_image,
        grad_text,
        grad_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::normalize_rows;
    use ndarray::array;

    fn eb(m: Array2<f64>) -> EmbeddingBatch {
        normalize_rows(m.view()).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let a = eb(array![[0.3, -0.2, 0.9]]);
        let b = eb(array![[-0.5, 0.1, 0.4]]);
        let out = clip_loss_and_grads(&a, &b, &TemperatureParam::from_tau(0.3)).unwrap();
        assert_eq!(out.l_image, 0.0);
        assert_eq!(out.l_text, 0.0);
        assert_eq!(out.total, 0.0);
    }

    #[test]
    fn identical_rows_give_ln2() {
        let rows = eb(array![[1.0, 0.0], [1.0, 0.0]]);
        let out = clip_loss_and_grads(&rows, &rows, &TemperatureParam::from_tau(1.0)).unwrap();
        assert!((out.total - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_pair_at_clip_temperature() {
        // ln(1 + e^{-1/0.07}) evaluated at 40 significant digits.
        let expected = 6.248_747_557_120_382e-7;
        let eye = eb(Array2::eye(2));
        let out = clip_loss_and_grads(&eye, &eye, &TemperatureParam::from_tau(0.07)).unwrap();
        assert!((out.total - expected).abs() < 1e-18, "{}", out.total);
    }

    #[test]
    fn shape_mismatch() {
        let a = eb(Array2::eye(2));
        let b = eb(Array2::eye(3));
        assert!(matches!(
            clip_loss_and_grads(&a, &b, &TemperatureParam::default()),
            Err(LossError::ShapeMismatch(_))
        ));
        assert_eq!(
            multitext_loss_and_grads(&a, &[], &TemperatureParam::default(), ImageSideScaling::Mean),
            Err(LossError::EmptyTextList)
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = array![[1000.0, -1000.0, 3.0], [0.1, 0.2, 0.3]];
        let p = softmax_rows(logits.view());
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_temperature_stays_finite() {
        let a = eb(array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]);
        let b = eb(array![[0.0, 1.0], [1.0, 0.0], [0.8, 0.6]]);
        let out = clip_loss_unchecked(a.view(), b.view(), (1.0f64 / 1e-3).ln()).unwrap();
        assert!(out.total.is_finite() && out.total > 100.0);
        assert!(out.grad_image.iter().all(|v| v.is_finite()));
        assert!(out.grad_s.is_finite());
    }

    #[test]
    fn printed_scaling_rescales_image_side() {
        let a = eb(array![[1.0, 0.2], [0.1, 1.0], [0.5, 0.5]]);
        let t0 = eb(array![[0.9, 0.1], [0.3, 1.0], [0.4, 0.6]]);
        let t1 = eb(array![[1.0, 0.0], [0.0, 1.0], [0.7, 0.5]]);
        let temp = TemperatureParam::from_tau(0.5);
        let mean = multitext_loss_and_grads(&a, &[t0.clone(), t1.clone()], &temp, ImageSideScaling::Mean).unwrap();
        let printed = multitext_loss_and_grads(&a, &[t0, t1], &temp, ImageSideScaling::Printed).unwrap();
        // N (M + 1) / M = 3 * 2 / 1
        assert!((printed.l_image - 6.0 * mean.l_image).abs() < 1e-12);
        assert_eq!(printed.l_text, mean.l_text);
    }
}
