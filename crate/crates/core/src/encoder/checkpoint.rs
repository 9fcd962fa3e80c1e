use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EncoderError, EncoderParams, TrainConfig};
use crate::contrastive::TemperatureParam;
use crate::FORMAT_HEADER;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config_hash: String,
    config: TrainConfig,
    temperature: TemperatureParam,
    tensors: Vec<TensorEntry>,
}

/// Trained parameters with the config that produced them.
///
/// Layout: the format header line, one JSON header line, then each tensor as
/// raw little-endian `f64` in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    pub params: EncoderParams,
}

const TENSOR_NAMES: [&str; 3] = ["token_embedding", "text_proj", "image_proj"];

impl Checkpoint {
    pub fn new(config: TrainConfig, params: EncoderParams) -> Self {
        Self {
            config_hash: config.hash(),
            config,
            params,
        }
    }

    fn tensors(&self) -> [&Array2<f64>; 3] {
        [&self.params.token_embedding, &self.params.text_proj, &self.params.image_proj]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            temperature: self.params.temp,
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.tensors())
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(FORMAT_HEADER.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
        out.push(b'\n');
        for t in self.tensors() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let bad = |m: String| EncoderError::Checkpoint(m);
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let version = lines.next().unwrap_or_default();
        if version != FORMAT_HEADER.as_bytes() {
            return Err(bad(format!("unsupported header {:?}", String::from_utf8_lossy(version))));
        }
        let header: Header = serde_json::from_slice(lines.next().unwrap_or_default())
            .map_err(|e| bad(format!("bad JSON header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {}", header.version)));
        }
        let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
        if names != TENSOR_NAMES {
            return Err(bad(format!("unexpected tensor list {names:?}")));
        }
        let mut body = lines.next().unwrap_or_default();
        let mut tensors = Vec::with_capacity(3);
        for t in &header.tensors {
            let len = t.shape[0] * t.shape[1] * 8;
            if body.len() < len {
                return Err(bad(format!("truncated tensor {}", t.name)));
            }
            let values: Vec<f64> = body[..len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Array2::from_shape_vec((t.shape[0], t.shape[1]), values).expect("length checked"));
            body = &body[len..];
        }
        if !body.is_empty() {
            return Err(bad(format!("{} trailing bytes", body.len())));
        }
        let image_proj = tensors.pop().expect("three tensors");
        let text_proj = tensors.pop().expect("three tensors");
        let token_embedding = tensors.pop().expect("three tensors");
        let params = EncoderParams {
            token_embedding,
            text_proj,
            image_proj,
            temp: header.temperature,
        };
        params.validate()?;
        if header.config.hash() != header.config_hash {
            return Err(bad("config_hash does not match the stored config".into()));
        }
        Ok(Self {
            config: header.config,
            config_hash: header.config_hash,
            params,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| bad_io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| bad_io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn bad_io(path: &Path, e: std::io::Error) -> EncoderError {
    EncoderError::Checkpoint(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelDims;
    use crate::util::rng_from_seed;

    #[test]
    fn round_trip() {
        let config = TrainConfig {
            vocab_size: 20,
            token_dim: 3,
            embed_dim: 2,
            ..TrainConfig::default()
        };
        let dims = ModelDims {
            vocab_size: 20,
            token_dim: 3,
            embed_dim: 2,
            image_dim: 5,
        };
        let params = EncoderParams::init(dims, config.temperature(), 0.1, &mut rng_from_seed(0));
        let ck = Checkpoint::new(config, params);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
