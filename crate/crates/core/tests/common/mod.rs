//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use laclip_core::contrastive::EmbeddingBatch;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `n x d` rows drawn from N(0, 1) via Box-Muller, not normalized.
pub fn gaussian(n: usize, d: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

pub fn unit(n: usize, d: usize, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let mut x = gaussian(n, d, rng);
    for mut row in x.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    x
}

pub fn batch(x: Array2<f64>) -> EmbeddingBatch {
    EmbeddingBatch::new(x).expect("unit rows")
}

fn sim(a: ArrayView2<'_, f64>, i: usize, b: ArrayView2<'_, f64>, k: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..a.ncols() {
        acc += a[[i, c]] * b[[k, c]];
    }
    acc
}

/// Scalar triple loop over images `i`, text slots `j` and candidates `k`.
/// Returns `(l_image, l_text, total)` with every term averaged over the
/// `N * slots` anchors on each side.
pub fn brute_force_multitext(img: ArrayView2<'_, f64>, txts: &[ArrayView2<'_, f64>], tau: f64) -> (f64, f64, f64) {
    let n = img.nrows();
    let slots = txts.len();
    let mut l_image = 0.0;
    let mut l_text = 0.0;
    for i in 0..n {
        for txt in txts {
            let mut denom = 0.0;
            for k in 0..n {
                denom += (sim(img, i, *txt, k) / tau).exp();
            }
            l_image -= ((sim(img, i, *txt, i) / tau).exp() / denom).ln();

            let mut denom = 0.0;
            for k in 0..n {
                denom += (sim(*txt, i, img, k) / tau).exp();
            }
            l_text -= ((sim(*txt, i, img, i) / tau).exp() / denom).ln();
        }
    }
    let scale = (n * slots) as f64;
    let (li, lt) = (l_image / scale, l_text / scale);
    (li, lt, 0.5 * (li + lt))
}

/// Largest `|a - b|` over the tensor, relative to the largest `|b|`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = numeric.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

use laclip_core::contrastive::{clip_loss_unchecked, multitext_loss_unchecked, ImageSideScaling, LossOutput};

pub const TAUS: [f64; 3] = [0.05, 0.5, 1.0];

fn flat(x: &Array2<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

fn shaped(v: &[f64], n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_vec((n, d), v.to_vec()).expect("sized")
}

/// Worst relative error of every gradient of one loss evaluation against
/// central differences. `slots == 0` means the two-tower loss.
pub fn gradient_check(n: usize, d: usize, slots: usize, tau: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let img = unit(n, d, &mut r);
    let txts: Vec<Array2<f64>> = (0..slots.max(1)).map(|_| unit(n, d, &mut r)).collect();
    let s = (1.0 / tau).ln();
    let eval = |img: &Array2<f64>, txts: &[Array2<f64>], s: f64| -> LossOutput {
        if slots == 0 {
            clip_loss_unchecked(img.view(), txts[0].view(), s).unwrap()
        } else {
            let views: Vec<_> = txts.iter().map(|t| t.view()).collect();
            multitext_loss_unchecked(img.view(), &views, s, ImageSideScaling::Mean).unwrap()
        }
    };
    let out = eval(&img, &txts, s);
    let h = 1e-5;

    let num_img = central_diff(&flat(&img), h, |v| eval(&shaped(v, n, d), &txts, s).total);
    let mut worst = rel_err(&flat(&out.grad_image), &num_img);

    for j in 0..txts.len() {
        let num = central_diff(&flat(&txts[j]), h, |v| {
            let mut t = txts.clone();
            t[j] = shaped(v, n, d);
            eval(&img, &t, s).total
        });
        let analytic: Vec<f64> = out.grad_text.rows().into_iter().skip(j * n).take(n).flatten().copied().collect();
        worst = worst.max(rel_err(&analytic, &num));
    }

    let num_s = central_diff(&[s], h, |v| eval(&img, &txts, v[0]).total);
    worst.max(rel_err(&[out.grad_s], &num_s))
}

/// `count` configurations with N in 2..=8, d in 2..=16, M in 0..=3 and tau
/// cycling through [`TAUS`]; every third configuration uses the two-tower loss.
pub fn gradient_suite(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..count)
        .map(|c| {
            let n = r.gen_range(2..=8);
            let d = r.gen_range(2..=16);
            let slots = if c % 3 == 0 { 0 } else { r.gen_range(1..=4) };
            gradient_check(n, d, slots, TAUS[(c / 3) % 3], seed.wrapping_add(c as u64 + 1))
        })
        .fold(0.0, f64::max)
}

use laclip_core::dataset::AugmentedRecord;
use laclip_core::textaug::{eda_augment, sample_caption, EdaOp, EdaParams};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn record_with_rewrites(m: usize) -> AugmentedRecord {
    let mut r = AugmentedRecord::original("r0", "img0", "caption 0");
    for k in 1..=m {
        r.push_rewrite(format!("caption {k}"), "fixture", "fixture");
    }
    r
}

/// Pearson statistic of `draws` calls to `sample_caption` against the uniform
/// distribution over the `m + 1` captions, and the critical value at `alpha`.
pub fn sampler_chi_square(draws: usize, m: usize, seed: u64, alpha: f64) -> (f64, f64) {
    let record = record_with_rewrites(m);
    let mut counts = vec![0usize; m + 1];
    let mut r = laclip_core::util::rng_from_seed(seed);
    for _ in 0..draws {
        let picked = sample_caption(&record, &mut r);
        let k = record.captions.iter().position(|c| c == picked).expect("one of the captions");
        counts[k] += 1;
    }
    let expected = draws as f64 / (m + 1) as f64;
    let stat = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(m as f64).unwrap().inverse_cdf(1.0 - alpha);
    (stat, critical)
}

const WORDS: &[&str] = &[
    "a", "the", "dog", "cat", "big", "small", "red", "car", "runs", "sits", "on", "grass", "beach", "man", "woman",
    "photo", "of", "bird", "flies", "over", "sea", "house", "old", "new", "tree", "green", "happy", "child", "plays",
    "ball", "zzq", "street", "walks", "near",
];

/// Sentence of 1 to 15 words from a small vocabulary that overlaps the
/// bundled synonym table.
pub fn random_sentence(r: &mut ChaCha20Rng) -> String {
    let n = r.gen_range(1..=15);
    (0..n).map(|_| WORDS[r.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn sorted_words(s: &str) -> Vec<String> {
    let mut w: Vec<String> = s.split_whitespace().map(str::to_lowercase).collect();
    w.sort();
    w
}

/// Checks the word-level invariants of swap, deletion and replacement on one
/// sentence.
pub fn eda_properties(sentence: &str, seed: u64) -> Result<(), String> {
    let params = EdaParams::default();
    let mut r = laclip_core::util::rng_from_seed(seed);
    let n = sentence.split_whitespace().count();
    let run = |op, r: &mut laclip_core::util::Rng| eda_augment(sentence, op, &params, r).map_err(|e| e.to_string());

    let swapped = run(EdaOp::RandomSwap, &mut r)?;
    if sorted_words(&swapped) != sorted_words(sentence) {
        return Err(format!("swap changed the words of {sentence:?}: {swapped:?}"));
    }
    let deleted = run(EdaOp::RandomDeletion, &mut r)?;
    let kept = deleted.split_whitespace().count();
    if kept == 0 || kept > n {
        return Err(format!("deletion of {sentence:?} left {kept} words"));
    }
    let replaced = run(EdaOp::SynonymReplacement, &mut r)?;
    if replaced.split_whitespace().count() != n {
        return Err(format!("replacement changed the length of {sentence:?}: {replaced:?}"));
    }
    let total_deletion = EdaParams {
        p_rd: 1.0,
        ..EdaParams::default()
    };
    let out = eda_augment(sentence, EdaOp::RandomDeletion, &total_deletion, &mut r).map_err(|e| e.to_string())?;
    if out.split_whitespace().count() != 1 {
        return Err(format!("p_rd = 1 on {sentence:?} gave {out:?}"));
    }
    Ok(())
}

use laclip_core::dataset::{gen_synthetic, SyntheticData, SyntheticSpec};
use laclip_core::encoder::{train, Checkpoint, TrainConfig, TrainMode, TrainOutput};
use laclip_core::eval::{build_zeroshot_classifier, embed_images, zeroshot_accuracy, ModelTextEncoder};

pub fn train_synthetic(data: &SyntheticData, mode: TrainMode, epochs: usize, seed: u64) -> (TrainConfig, TrainOutput) {
    let config = TrainConfig {
        seed,
        mode,
        epochs,
        ..TrainConfig::default()
    };
    let out = train(&config, &data.train, &data.features).expect("training succeeds");
    (config, out)
}

/// Zero-shot accuracy on the held-out images with class prompts built from
/// `templates`.
pub fn heldout_zeroshot(data: &SyntheticData, config: &TrainConfig, out: &TrainOutput, templates: &[String]) -> f64 {
    let ids: Vec<&str> = data.test.iter().map(|r| r.image_ref.as_str()).collect();
    let feats = data.features.gather(&ids).unwrap();
    let images = embed_images(&out.params, feats.view()).unwrap();
    let encoder = ModelTextEncoder {
        params: &out.params,
        tokenizer: config.tokenizer(),
    };
    let clf = build_zeroshot_classifier(&data.class_names, templates, &encoder).unwrap();
    zeroshot_accuracy(&clf, images.view(), &data.labels_for(&data.test)).unwrap()
}

pub struct TransferRun {
    pub seed: u64,
    pub clip_zeroshot: f64,
    pub clip_shifted: f64,
    pub laclip_shifted: f64,
}

/// 20 epochs of clip and laclip on the default synthetic spec for one seed.
pub fn synthetic_transfer(seed: u64) -> TransferRun {
    let spec = SyntheticSpec::default();
    let data = gen_synthetic(&spec, seed).unwrap();
    let (cfg, clip) = train_synthetic(&data, TrainMode::Clip, 20, seed);
    let clip_zeroshot = heldout_zeroshot(&data, &cfg, &clip, &spec.caption_templates);
    let clip_shifted = heldout_zeroshot(&data, &cfg, &clip, &spec.paraphrase_templates);
    let (cfg, laclip) = train_synthetic(&data, TrainMode::Laclip, 20, seed);
    let laclip_shifted = heldout_zeroshot(&data, &cfg, &laclip, &spec.paraphrase_templates);
    TransferRun {
        seed,
        clip_zeroshot,
        clip_shifted,
        laclip_shifted,
    }
}

/// Metrics CSV and checkpoint bytes of one training run.
pub fn training_artifacts(seed: u64, mode: TrainMode) -> (String, Vec<u8>) {
    let spec = SyntheticSpec {
        n_classes: 8,
        samples_per_class: 32,
        feature_dim: 16,
        ..SyntheticSpec::default()
    };
    let data = gen_synthetic(&spec, seed).unwrap();
    let config = TrainConfig {
        seed,
        mode,
        epochs: 3,
        batch_size: 32,
        vocab_size: 512,
        token_dim: 16,
        embed_dim: 16,
        ..TrainConfig::default()
    };
    let out = train(&config, &data.train, &data.features).unwrap();
    let csv = laclip_core::encoder::write_metrics_csv(&out.metrics);
    let bytes = Checkpoint::new(config, out.params).to_bytes();
    (csv, bytes)
}

/// Random orthogonal `d x d` matrix by Gram-Schmidt on Gaussian columns.
pub fn random_rotation(d: usize, r: &mut ChaCha20Rng) -> Array2<f64> {
    let mut q = gaussian(d, d, r);
    for j in 0..d {
        for k in 0..j {
            let proj = q.column(j).dot(&q.column(k));
            let qk = q.column(k).to_owned();
            q.column_mut(j).scaled_add(-proj, &qk);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

/// Three well separated 2-d clusters, `per_class` points each.
pub fn separable_clusters(per_class: usize, r: &mut ChaCha20Rng) -> (Array2<f64>, Vec<usize>) {
    let centers = [[4.0, 0.0], [-2.0, 3.5], [-2.0, -3.5]];
    let noise = gaussian(3 * per_class, 2, r) * 0.3;
    let x = Array2::from_shape_fn((3 * per_class, 2), |(i, c)| centers[i / per_class][c] + noise[[i, c]]);
    let y = (0..3 * per_class).map(|i| i / per_class).collect();
    (x, y)
}
