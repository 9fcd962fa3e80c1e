use std::collections::HashSet;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{
    adamw_step, aug_image, encode_image, encode_text, AdamWHyper, EncoderError, EncoderGrads, EncoderParams,
    ModelDims, OptState, TokenSeq, Tokenizer,
};
use crate::contrastive::{
    clip_loss_and_grads, multitext_loss_and_grads, ImageSideScaling, LossOutput, TemperatureParam,
};
use crate::dataset::{batch_iter, AugmentedRecord, CaptionPolicy, FeatureStore};
use crate::util::{derive_seed, rng_from_seed, stable_hash};

/// Which text objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum TrainMode {
    /// Original captions only.
    Clip,
    /// One caption per record per epoch, drawn uniformly from original + rewrites.
    Laclip,
    /// Every caption of a record is a positive for its image.
    LaclipMt,
}

impl TrainMode {
    pub fn caption_policy(self) -> CaptionPolicy {
        match self {
            TrainMode::Clip => CaptionPolicy::Original,
            TrainMode::Laclip => CaptionPolicy::Sample,
            TrainMode::LaclipMt => CaptionPolicy::All,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Clip => "clip",
            TrainMode::Laclip => "laclip",
            TrainMode::LaclipMt => "laclip_mt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub token_dim: usize,
    pub embed_dim: usize,
    pub token_init_std: f64,
    pub init_tau: f64,
    pub max_logit_scale: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_epochs: f64,
    pub image_aug_sigma: f64,
    pub image_dropout_p: f64,
    pub multitext_scaling: ImageSideScaling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: TrainMode::Clip,
            epochs: 10,
            batch_size: 256,
            vocab_size: 49_408,
            context_len: 77,
            token_dim: 64,
            embed_dim: 64,
            token_init_std: 0.02,
            init_tau: 0.07,
            max_logit_scale: 100.0,
            lr: 1e-3,
            weight_decay: 0.5,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            warmup_epochs: 1.0,
            image_aug_sigma: 0.05,
            image_dropout_p: 0.1,
            multitext_scaling: ImageSideScaling::Mean,
        }
    }
}

impl TrainConfig {
    // Negated comparisons so NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.vocab_size <= 3 {
            return bad("vocab_size must exceed 3");
        }
        if self.context_len < 2 {
            return bad("context_len must be at least 2");
        }
        if self.token_dim == 0 || self.embed_dim == 0 {
            return bad("token_dim and embed_dim must be positive");
        }
        if !(self.token_init_std > 0.0) {
            return bad("token_init_std must be positive");
        }
        if !(self.init_tau > 0.0) || !(self.max_logit_scale > 0.0) {
            return bad("init_tau and max_logit_scale must be positive");
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return bad("lr and weight_decay must be non-negative, eps positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.warmup_epochs >= 0.0) || self.warmup_epochs > self.epochs as f64 {
            return bad("warmup_epochs must lie in [0, epochs]");
        }
        if !(self.image_aug_sigma >= 0.0) || !(0.0..1.0).contains(&self.image_dropout_p) {
            return bad("image_aug_sigma must be >= 0 and image_dropout_p in [0, 1)");
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.vocab_size, self.context_len)
    }

    /// 16 hex digits of XXH64 over the canonical JSON of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", stable_hash(json.as_bytes()))
    }

    pub fn temperature(&self) -> TemperatureParam {
        TemperatureParam {
            s: (1.0 / self.init_tau).ln(),
            clamp_max: self.max_logit_scale.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub l_image: f64,
    pub l_text: f64,
    pub tau: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "step,epoch,loss,l_image,l_text,tau,lr";

pub fn write_metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.step, m.epoch, m.loss, m.l_image, m.l_text, m.tau, m.lr
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: EncoderParams,
    pub metrics: Vec<StepMetrics>,
    pub config_hash: String,
}

impl TrainOutput {
    /// Mean step loss of each epoch, epochs numbered from 1.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let epochs = self.metrics.iter().map(|m| m.epoch).max().unwrap_or(0);
        (1..=epochs)
            .map(|e| {
                let steps: Vec<f64> = self.metrics.iter().filter(|m| m.epoch == e).map(|m| m.loss).collect();
                steps.iter().sum::<f64>() / steps.len() as f64
            })
            .collect()
    }
}

/// Loss and parameter gradients for one batch of (already augmented) image
/// features and one or more text slots.
pub fn forward_backward(
    params: &EncoderParams,
    image_features: ArrayView2<'_, f64>,
    texts: &[Vec<TokenSeq>],
    scaling: ImageSideScaling,
) -> Result<(LossOutput, EncoderGrads), EncoderError> {
    let image = encode_image(params, image_features)?;
    let text: Vec<_> = texts.iter().map(|t| encode_text(params, t)).collect::<Result<_, _>>()?;
    let loss = match text.as_slice() {
        [single] => clip_loss_and_grads(&image.embeddings, &single.embeddings, &params.temp)?,
        _ => {
            let batches: Vec<_> = text.iter().map(|t| t.embeddings.clone()).collect();
            multitext_loss_and_grads(&image.embeddings, &batches, &params.temp, scaling)?
        }
    };
    let n = image.embeddings.n();
    let mut grads = EncoderGrads::zeros_like(params);
    grads.s = loss.grad_s;
    image.backward(loss.grad_image.view(), &mut grads);
    for (j, t) in text.iter().enumerate() {
        t.backward(params, loss.grad_text.slice(ndarray::s![j * n..(j + 1) * n, ..]), &mut grads);
    }
    Ok((loss, grads))
}

fn validate_data(config: &TrainConfig, records: &[AugmentedRecord], features: &FeatureStore) -> Result<(), EncoderError> {
    let bad = |m: String| Err(EncoderError::InvalidConfig(m));
    if records.is_empty() {
        return bad("training set is empty".into());
    }
    let mut seen = HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return bad(format!("duplicate record id {:?}", r.id));
        }
        if features.get(&r.image_ref).is_none() {
            return bad(format!("record {:?}: no features for image {:?}", r.id, r.image_ref));
        }
    }
    match config.mode {
        TrainMode::Clip => {}
        TrainMode::Laclip | TrainMode::LaclipMt => {
            if let Some(r) = records.iter().find(|r| r.m() == 0) {
                return bad(format!("mode {} needs rewrites; record {:?} has none", config.mode.as_str(), r.id));
            }
        }
    }
    if config.mode == TrainMode::LaclipMt {
        let m = records[0].m();
        if let Some(r) = records.iter().find(|r| r.m() != m) {
            return bad(format!("laclip_mt needs the same rewrite count on every record; {:?} differs", r.id));
        }
    }
    Ok(())
}

/// Trains the reference encoders. Deterministic given `(config, records, features)`.
pub fn train(config: &TrainConfig, records: &[AugmentedRecord], features: &FeatureStore) -> Result<TrainOutput, EncoderError> {
    config.validate()?;
    validate_data(config, records, features)?;

    let tokenizer = config.tokenizer();
    let dims = ModelDims {
        vocab_size: config.vocab_size,
        token_dim: config.token_dim,
        embed_dim: config.embed_dim,
        image_dim: features.dim(),
    };
    let mut params = EncoderParams::init(
        dims,
        config.temperature(),
        config.token_init_std,
        &mut rng_from_seed(derive_seed(config.seed, "init", 0)),
    );

    let steps_per_epoch = records.len().div_ceil(config.batch_size) as u64;
    let hyper = AdamWHyper {
        lr: config.lr,
        weight_decay: config.weight_decay,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.eps,
        warmup_steps: (config.warmup_epochs * steps_per_epoch as f64).round() as u64,
        total_steps: steps_per_epoch * config.epochs as u64,
    };
    let mut state = OptState::new(&params, hyper);
    let mut metrics = Vec::with_capacity((steps_per_epoch * config.epochs as u64) as usize);

    for epoch in 1..=config.epochs {
        let epoch_seed = derive_seed(config.seed, "epoch", epoch as u64);
        let batches = batch_iter(
            records,
            features,
            &tokenizer,
            config.batch_size,
            epoch_seed,
            config.mode.caption_policy(),
        )?;
        for batch in batches {
            let batch = batch?;
            let step = state.t + 1;
            let mut aug_rng = rng_from_seed(derive_seed(config.seed, "image-aug", step));
            let images = aug_image(
                batch.image_features.view(),
                &mut aug_rng,
                config.image_aug_sigma,
                config.image_dropout_p,
            );
            let tau = params.temp.tau();
            let (loss, grads) = forward_backward(&params, images.view(), &batch.texts, config.multitext_scaling)?;
            let lr = adamw_step(&mut params, &grads, &mut state)?;
            metrics.push(StepMetrics {
                step,
                epoch,
                loss: loss.total,
                l_image: loss.l_image,
                l_text: loss.l_text,
                tau,
                lr,
            });
        }
        log::debug!(
            "epoch {epoch}: mean loss {:.5}",
            metrics.iter().rev().take(steps_per_epoch as usize).map(|m| m.loss).sum::<f64>() / steps_per_epoch as f64
        );
    }

    Ok(TrainOutput {
        params,
        metrics,
        config_hash: config.hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, SyntheticSpec};

    fn tiny() -> (TrainConfig, Vec<AugmentedRecord>, FeatureStore) {
        let spec = SyntheticSpec {
            n_classes: 4,
            samples_per_class: 8,
            feature_dim: 8,
            ..SyntheticSpec::default()
        };
        let data = gen_synthetic(&spec, 1).unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            vocab_size: 64,
            context_len: 16,
            token_dim: 8,
            embed_dim: 8,
            ..TrainConfig::default()
        };
        (config, data.train, data.features)
    }

    #[test]
    fn laclip_with_identical_rewrites_tracks_clip() {
        let (config, mut records, features) = tiny();
        for r in &mut records {
            let original = r.captions[0].clone();
            for c in r.captions.iter_mut().skip(1) {
                *c = original.clone();
            }
        }
        let clip = train(&config, &records, &features).unwrap();
        let laclip = train(
            &TrainConfig {
                mode: TrainMode::Laclip,
                ..config
            },
            &records,
            &features,
        )
        .unwrap();
        assert_eq!(clip.params, laclip.params);
        let losses = |o: &TrainOutput| o.metrics.iter().map(|m| m.loss).collect::<Vec<_>>();
        assert_eq!(losses(&clip), losses(&laclip));
    }

    #[test]
    fn laclip_needs_rewrites() {
        let (config, mut records, features) = tiny();
        records[3].captions.truncate(1);
        records[3].rewrite_meta.clear();
        let err = train(
            &TrainConfig {
                mode: TrainMode::LaclipMt,
                ..config
            },
            &records,
            &features,
        )
        .unwrap_err();
        assert!(matches!(err, EncoderError::InvalidConfig(_)));
    }

    #[test]
    fn tau_and_outputs_stay_valid() {
        let (config, records, features) = tiny();
        let out = train(
            &TrainConfig {
                lr: 0.05,
                mode: TrainMode::LaclipMt,
                ..config
            },
            &records,
            &features,
        )
        .unwrap();
        for m in &out.metrics {
            assert!(m.tau > 0.0 && 1.0 / m.tau <= 100.0 + 1e-9);
        }
        assert!(out.params.temp.logit_scale() <= 100.0 + 1e-9);
        assert!(out.params.all_finite());
    }

    #[test]
    fn metrics_csv_layout() {
        let csv = write_metrics_csv(&[StepMetrics {
            step: 1,
            epoch: 1,
            loss: 0.5,
            l_image: 0.25,
            l_text: 0.75,
            tau: 0.07,
            lr: 0.001,
        }]);
        assert_eq!(csv, "step,epoch,loss,l_image,l_text,tau,lr\n1,1,0.5,0.25,0.75,0.07,0.001\n");
    }
}
