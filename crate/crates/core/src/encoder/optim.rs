use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{EncoderError, EncoderGrads, EncoderParams};

/// AdamW with linear warmup and cosine decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.5,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            warmup_steps: 0,
            total_steps: 1,
        }
    }
}

impl AdamWHyper {
    /// Learning rate for 1-based step `t`: linear ramp to `lr` over the warmup,
    /// then half-cosine decay to zero at `total_steps`.
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps > 0 && t <= self.warmup_steps {
            return self.lr * t as f64 / self.warmup_steps as f64;
        }
        if t >= self.total_steps {
            return 0.0;
        }
        let progress = (t - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.lr * 0.5 * (1.0 + (PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub t: u64,
    pub m: EncoderGrads,
    pub v: EncoderGrads,
    pub hyper: AdamWHyper,
}

impl OptState {
    pub fn new(params: &EncoderParams, hyper: AdamWHyper) -> Self {
        Self {
            t: 0,
            m: EncoderGrads::zeros_like(params),
            v: EncoderGrads::zeros_like(params),
            hyper,
        }
    }
}

/// One AdamW update of a flat tensor at 1-based step `t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hyper: &AdamWHyper,
    decay: bool,
) {
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    let shrink = if decay { 1.0 - lr * hyper.weight_decay } else { 1.0 };
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] * shrink - lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}

fn finite(name: &'static str, values: &[f64]) -> Result<(), EncoderError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EncoderError::NonFiniteGrad(name))
    }
}

/// Advances `state.t` and applies one update; returns the learning rate used.
///
/// Weight decay applies to the three matrices, not to the temperature, which
/// is clamped after its update.
pub fn adamw_step(params: &mut EncoderParams, grads: &EncoderGrads, state: &mut OptState) -> Result<f64, EncoderError> {
    finite("token_embedding", grads.token_embedding.as_slice().expect("standard layout"))?;
    finite("text_proj", grads.text_proj.as_slice().expect("standard layout"))?;
    finite("image_proj", grads.image_proj.as_slice().expect("standard layout"))?;
    finite("temperature", &[grads.s])?;

    state.t += 1;
    let t = state.t;
    let hyper = state.hyper;
    let lr = hyper.lr_at(t);

    macro_rules! update {
        ($field:ident) => {
            adamw_update(
                params.$field.as_slice_mut().expect("standard layout"),
                grads.$field.as_slice().expect("standard layout"),
                state.m.$field.as_slice_mut().expect("standard layout"),
                state.v.$field.as_slice_mut().expect("standard layout"),
                t,
                lr,
                &hyper,
                true,
            )
        };
    }
    update!(token_embedding);
    update!(text_proj);
    update!(image_proj);

    let mut s = [params.temp.s];
    let mut ms = [state.m.s];
    let mut vs = [state.v.s];
    adamw_update(&mut s, &[grads.s], &mut ms, &mut vs, t, lr, &hyper, false);
    params.temp.s = s[0];
    state.m.s = ms[0];
    state.v.s = vs[0];
    params.temp.clamp();
    Ok(lr)
}
