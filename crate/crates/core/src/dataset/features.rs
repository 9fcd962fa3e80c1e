use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::write_atomic;
use super::DatasetError;
use crate::FORMAT_HEADER;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    count: usize,
    dim: usize,
    ids: Vec<String>,
    ids_sha: String,
}

fn ids_sha(ids: &[String]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Precomputed image feature vectors keyed by image reference.
///
/// On disk: the format header line, a JSON header line `{count, dim, ids, ids_sha}`,
/// then `count * dim` little-endian `f32` values, row-major. In memory values are
/// `f64` but always exactly representable as `f32`, so a write/read cycle is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    rows: Array2<f64>,
}

impl FeatureStore {
    pub fn new(ids: Vec<String>, rows: Array2<f64>) -> Result<Self, DatasetError> {
        if ids.len() != rows.nrows() {
            return Err(DatasetError::FeatureFormat(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.nrows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(id.clone()));
            }
        }
        let rows = rows.mapv(|v| v as f32 as f64);
        Ok(Self { ids, index, rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(id).map(|&i| self.rows.row(i))
    }

    /// Stacks the vectors for `refs` in order.
    pub fn gather<S: AsRef<str>>(&self, refs: &[S]) -> Result<Array2<f64>, DatasetError> {
        let mut out = Array2::zeros((refs.len(), self.dim()));
        for (mut row, r) in out.axis_iter_mut(Axis(0)).zip(refs) {
            let src = self
                .get(r.as_ref())
                .ok_or_else(|| DatasetError::MissingFeature(r.as_ref().to_string()))?;
            row.assign(&src);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            count: self.ids.len(),
            dim: self.dim(),
            ids: self.ids.clone(),
            ids_sha: ids_sha(&self.ids),
        };
        let mut out = Vec::new();
        out.extend_from_slice(FORMAT_HEADER.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
        out.push(b'\n');
        for v in self.rows.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let bad = |m: &str| DatasetError::FeatureFormat(m.to_string());
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing version line"))?;
        let version = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("version line is not utf-8"))?;
        if version != FORMAT_HEADER {
            return Err(DatasetError::UnsupportedVersion(version.to_string()));
        }
        let rest = &bytes[nl + 1..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing JSON header"))?;
        let header: Header =
            serde_json::from_slice(&rest[..nl]).map_err(|e| DatasetError::FeatureFormat(e.to_string()))?;
        if header.ids.len() != header.count {
            return Err(bad("id list length differs from count"));
        }
        if ids_sha(&header.ids) != header.ids_sha {
            return Err(bad("ids_sha does not match the id list"));
        }
        let body = &rest[nl + 1..];
        if body.len() != header.count * header.dim * 4 {
            return Err(DatasetError::FeatureFormat(format!(
                "expected {} bytes of f32 data, found {}",
                header.count * header.dim * 4,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let rows = Array2::from_shape_vec((header.count, header.dim), values).expect("length checked");
        Self::new(header.ids, rows)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bytes_round_trip() {
        let store = FeatureStore::new(vec!["a".into(), "b".into()], array![[0.1, 0.2, 0.3], [1.0, -2.0, 3.5]]).unwrap();
        let bytes = store.to_bytes();
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn tampered_ids_detected() {
        let store = FeatureStore::new(vec!["a".into()], array![[1.0]]).unwrap();
        let text = String::from_utf8_lossy(&store.to_bytes()).replace("\"a\"", "\"b\"");
        assert!(matches!(
            FeatureStore::from_bytes(text.as_bytes()),
            Err(DatasetError::FeatureFormat(_))
        ));
    }

    #[test]
    fn gather_missing() {
        let store = FeatureStore::new(vec!["a".into()], array![[1.0]]).unwrap();
        assert!(matches!(store.gather(&["zz"]), Err(DatasetError::MissingFeature(_))));
    }
}
