//! Contrastive objectives over L2-normalized embeddings.
//!
//! Similarities are row dot products; logits are similarities scaled by the
//! inverse temperature `exp(s)`. Gradients are returned with respect to the
//! already-normalized embedding rows and `s`; encoders chain the
//! normalization Jacobian themselves.

mod loss;

pub use loss::{
    clip_loss_and_grads, clip_loss_unchecked, multitext_loss_and_grads, multitext_loss_unchecked,
    softmax_rows, ImageSideScaling,
};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Tolerance on the unit-norm invariant of [`EmbeddingBatch`].
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("row {0} has zero norm")]
    ZeroNorm(usize),
    #[error("row {row} has norm {norm}, expected unit norm")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("text list is empty")]
    EmptyTextList,
    #[error("printed 1/M scaling needs at least one rewrite")]
    PrintedScalingNeedsRewrites,
}

/// `N x d` matrix whose rows have unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    rows: Array2<f64>,
}

impl EmbeddingBatch {
    /// Wraps `rows` after checking the unit-norm invariant.
    pub fn new(rows: Array2<f64>) -> Result<Self, LossError> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(LossError::EmptyBatch);
        }
        for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if !((1.0 - UNIT_NORM_TOL)..=(1.0 + UNIT_NORM_TOL)).contains(&norm) {
                return Err(LossError::NotUnitNorm { row: i, norm });
            }
        }
        Ok(Self { rows })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.rows
    }
}

/// Divides every row by its L2 norm.
pub fn normalize_rows(matrix: ArrayView2<'_, f64>) -> Result<EmbeddingBatch, LossError> {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return Err(LossError::EmptyBatch);
    }
    let mut out = matrix.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(LossError::ZeroNorm(i));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(EmbeddingBatch { rows: out })
}

/// Learnable log inverse temperature: `s = ln(1/tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParam {
    pub s: f64,
    pub clamp_max: f64,
}

impl Default for TemperatureParam {
    fn default() -> Self {
        Self::from_tau(0.07)
    }
}

impl TemperatureParam {
    pub fn from_tau(tau: f64) -> Self {
        Self {
            s: (1.0 / tau).ln(),
            clamp_max: 100f64.ln(),
        }
    }

    pub fn tau(&self) -> f64 {
        (-self.s).exp()
    }

    /// Inverse temperature, the factor applied to similarities.
    pub fn logit_scale(&self) -> f64 {
        self.s.exp()
    }

    pub fn clamp(&mut self) {
        if self.s > self.clamp_max {
            self.s = self.clamp_max;
        }
    }
}

/// Losses and gradients of one contrastive evaluation.
///
/// In multi-text mode `grad_text` stacks the `M + 1` slots: rows
/// `j * N .. (j + 1) * N` belong to text slot `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub l_image: f64,
    pub l_text: f64,
    pub total: f64,
    pub grad_image: Array2<f64>,
    pub grad_text: Array2<f64>,
    pub grad_s: f64,
}
