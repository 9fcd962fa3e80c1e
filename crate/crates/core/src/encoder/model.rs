use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EncoderError, TokenSeq};
use crate::contrastive::{EmbeddingBatch, TemperatureParam};
use crate::util::Rng;

/// Shapes of the reference encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    /// Token embedding width.
    pub token_dim: usize,
    /// Shared embedding width of both towers.
    pub embed_dim: usize,
    /// Width of the image feature vectors.
    pub image_dim: usize,
}

/// Mean-pooled token embeddings followed by a linear projection (text), and a
/// linear projection (image); both outputs are L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: Array2<f64>,
    pub text_proj: Array2<f64>,
    pub image_proj: Array2<f64>,
    pub temp: TemperatureParam,
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

impl EncoderParams {
    pub fn init(dims: ModelDims, temp: TemperatureParam, token_init_std: f64, rng: &mut Rng) -> Self {
        Self {
            token_embedding: gaussian_matrix(rng, dims.vocab_size, dims.token_dim, token_init_std),
            text_proj: gaussian_matrix(rng, dims.token_dim, dims.embed_dim, (dims.token_dim as f64).powf(-0.5)),
            image_proj: gaussian_matrix(rng, dims.image_dim, dims.embed_dim, (dims.image_dim as f64).powf(-0.5)),
            temp,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.token_embedding.nrows(),
            token_dim: self.token_embedding.ncols(),
            embed_dim: self.text_proj.ncols(),
            image_dim: self.image_proj.nrows(),
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let d = self.dims();
        if self.text_proj.nrows() != d.token_dim || self.image_proj.ncols() != d.embed_dim {
            return Err(EncoderError::ShapeMismatch(format!(
                "token_embedding {:?}, text_proj {:?}, image_proj {:?}",
                self.token_embedding.dim(),
                self.text_proj.dim(),
                self.image_proj.dim()
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        [&self.token_embedding, &self.text_proj, &self.image_proj]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && self.temp.s.is_finite()
    }
}

/// Gradients shaped like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub token_embedding: Array2<f64>,
    pub text_proj: Array2<f64>,
    pub image_proj: Array2<f64>,
    pub s: f64,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            token_embedding: Array2::zeros(params.token_embedding.raw_dim()),
            text_proj: Array2::zeros(params.text_proj.raw_dim()),
            image_proj: Array2::zeros(params.image_proj.raw_dim()),
            s: 0.0,
        }
    }
}

/// Normalizes rows of `z` and returns `(y, norms)`.
fn normalize(z: Array2<f64>) -> Result<(Array2<f64>, Vec<f64>), EncoderError> {
    let mut y = z;
    let mut norms = Vec::with_capacity(y.nrows());
    for (i, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(EncoderError::ZeroNorm(i));
        }
        row.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    Ok((y, norms))
}

/// Chains `grad_y` through `y = z / |z|`: `grad_z = (grad_y - y (y . grad_y)) / |z|`.
fn normalize_backward(y: &Array2<f64>, norms: &[f64], grad_y: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut gz = grad_y.to_owned();
    for ((mut g, yr), &n) in gz.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))).zip(norms) {
        let proj = yr.dot(&g);
        g.scaled_add(-proj, &yr);
        g.mapv_inplace(|v| v / n);
    }
    gz
}

/// Text tower forward pass with what the backward pass needs.
#[derive(Debug, Clone)]
pub struct TextForward {
    pub embeddings: EmbeddingBatch,
    tokens: Vec<Vec<u32>>,
    pooled: Array2<f64>,
    norms: Vec<f64>,
}

pub fn encode_text(params: &EncoderParams, batch: &[TokenSeq]) -> Result<TextForward, EncoderError> {
    let d_e = params.token_embedding.ncols();
    let vocab = params.token_embedding.nrows();
    let mut pooled = Array2::<f64>::zeros((batch.len(), d_e));
    let mut tokens = Vec::with_capacity(batch.len());
    for (mut row, seq) in pooled.axis_iter_mut(Axis(0)).zip(batch) {
        let ids = seq.non_pad().to_vec();
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab) {
            return Err(EncoderError::ShapeMismatch(format!("token id {bad} >= vocab size {vocab}")));
        }
        for &t in &ids {
            row += &params.token_embedding.row(t as usize);
        }
        let inv = 1.0 / ids.len() as f64;
        row.mapv_inplace(|v| v * inv);
        tokens.push(ids);
    }
    let (y, norms) = normalize(pooled.dot(&params.text_proj))?;
    Ok(TextForward {
        embeddings: EmbeddingBatch::new(y)?,
        tokens,
        pooled,
        norms,
    })
}

impl TextForward {
    /// Accumulates parameter gradients given `d loss / d embeddings`.
    pub fn backward(&self, params: &EncoderParams, grad: ArrayView2<'_, f64>, grads: &mut EncoderGrads) {
        let y = self.embeddings.view().to_owned();
        let gz = normalize_backward(&y, &self.norms, grad);
        grads.text_proj += &self.pooled.t().dot(&gz);
        let gh = gz.dot(&params.text_proj.t());
        for (ids, g) in self.tokens.iter().zip(gh.axis_iter(Axis(0))) {
            let inv = 1.0 / ids.len() as f64;
            for &t in ids {
                grads.token_embedding.row_mut(t as usize).scaled_add(inv, &g);
            }
        }
    }
}

/// Image tower forward pass.
#[derive(Debug, Clone)]
pub struct ImageForward {
    pub embeddings: EmbeddingBatch,
    features: Array2<f64>,
    norms: Vec<f64>,
}

pub fn encode_image(params: &EncoderParams, features: ArrayView2<'_, f64>) -> Result<ImageForward, EncoderError> {
    if features.ncols() != params.image_proj.nrows() {
        return Err(EncoderError::ShapeMismatch(format!(
            "features have width {}, image_proj expects {}",
            features.ncols(),
            params.image_proj.nrows()
        )));
    }
    let (y, norms) = normalize(features.dot(&params.image_proj))?;
    Ok(ImageForward {
        embeddings: EmbeddingBatch::new(y)?,
        features: features.to_owned(),
        norms,
    })
}

impl ImageForward {
    pub fn backward(&self, grad: ArrayView2<'_, f64>, grads: &mut EncoderGrads) {
        let y = self.embeddings.view().to_owned();
        let gz = normalize_backward(&y, &self.norms, grad);
        grads.image_proj += &self.features.t().dot(&gz);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Tokenizer;
    use crate::util::rng_from_seed;
    use ndarray::array;

    fn fixture() -> EncoderParams {
        let mut token_embedding = Array2::zeros((8, 3));
        token_embedding.row_mut(1).assign(&array![0.0, 0.0, 0.0]);
        token_embedding.row_mut(2).assign(&array![0.0, 0.0, 0.0]);
        token_embedding.row_mut(5).assign(&array![3.0, 0.0, 4.0]);
        EncoderParams {
            token_embedding,
            text_proj: Array2::eye(3),
            image_proj: Array2::eye(3),
            temp: TemperatureParam::default(),
        }
    }

    #[test]
    fn single_token_identity_projection() {
        let p = fixture();
        let seq = TokenSeq { ids: vec![1, 5, 2, 0] };
        let out = encode_text(&p, &[seq]).unwrap();
        let row = out.embeddings.view().row(0).to_owned();
        assert!((row[0] - 0.6).abs() < 1e-15 && row[1].abs() < 1e-15 && (row[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn duplicate_sequences_identical_rows() {
        let mut rng = rng_from_seed(2);
        let dims = ModelDims {
            vocab_size: 50,
            token_dim: 4,
            embed_dim: 3,
            image_dim: 5,
        };
        let p = EncoderParams::init(dims, TemperatureParam::default(), 0.5, &mut rng);
        let tok = Tokenizer::new(50, 10);
        let s = tok.tokenize("a red kite");
        let out = encode_text(&p, &[s.clone(), s]).unwrap();
        assert_eq!(out.embeddings.view().row(0), out.embeddings.view().row(1));

        let f = array![[0.3, -1.0, 2.0, 0.5, 0.1], [0.3, -1.0, 2.0, 0.5, 0.1]];
        let img = encode_image(&p, f.view()).unwrap();
        assert_eq!(img.embeddings.view().row(0), img.embeddings.view().row(1));
    }

    #[test]
    fn zero_projection_errors() {
        let p = fixture();
        let seq = TokenSeq { ids: vec![1, 2, 0, 0] };
        assert!(matches!(encode_text(&p, &[seq]), Err(EncoderError::ZeroNorm(0))));
    }

    #[test]
    fn image_width_checked() {
        let p = fixture();
        assert!(matches!(
            encode_image(&p, Array2::zeros((1, 4)).view()),
            Err(EncoderError::ShapeMismatch(_))
        ));
    }
}
