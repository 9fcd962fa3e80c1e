use std::path::{Path, PathBuf};

use super::{write_augmented, AugmentedRecord, DatasetError};
use crate::util::stable_hash;

/// `stable_hash(id) mod n_shards`.
pub fn shard_index(id: &str, n_shards: usize) -> usize {
    (stable_hash(id.as_bytes()) % n_shards as u64) as usize
}

/// Partitions records by id hash, keeping input order inside each shard.
pub fn shard(records: &[AugmentedRecord], n_shards: usize) -> Vec<Vec<AugmentedRecord>> {
    assert!(n_shards >= 1, "n_shards must be at least 1");
    let mut out = vec![Vec::new(); n_shards];
    for r in records {
        out[shard_index(&r.id, n_shards)].push(r.clone());
    }
    out
}

pub fn shard_path(dir: &Path, stem: &str, index: usize, n_shards: usize) -> PathBuf {
    dir.join(format!("{stem}-{index:05}-of-{n_shards:05}.jsonl"))
}

/// Writes one augmented-format file per shard and returns their paths.
pub fn write_shards(
    records: &[AugmentedRecord],
    n_shards: usize,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<Vec<PathBuf>, DatasetError> {
    let dir = dir.as_ref();
    shard(records, n_shards)
        .iter()
        .enumerate()
        .map(|(i, part)| {
            let path = shard_path(dir, stem, i, n_shards);
            write_augmented(&path, part)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<AugmentedRecord> {
        (0..n)
            .map(|i| AugmentedRecord::original(format!("rec-{i}"), format!("img-{i}"), format!("caption {i}")))
            .collect()
    }

    #[test]
    fn single_shard_is_input() {
        let recs = records(20);
        let parts = shard(&recs, 1);
        assert_eq!(parts, vec![recs]);
    }

    #[test]
    fn four_shards_balanced() {
        // Binomial(1000, 1/4): sigma = sqrt(1000 * 0.25 * 0.75) ~= 13.69, 4 sigma ~= 54.8.
        let sigma = (1000.0f64 * 0.25 * 0.75).sqrt();
        let parts = shard(&records(1000), 4);
        for p in &parts {
            assert!((p.len() as f64 - 250.0).abs() <= 4.0 * sigma, "{}", p.len());
        }
    }

    #[test]
    fn sharding_is_deterministic() {
        let recs = records(100);
        assert_eq!(shard(&recs, 7), shard(&recs, 7));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = records(30);
        let paths = write_shards(&recs, 3, dir.path(), "caps").unwrap();
        let mut all: Vec<_> = paths
            .iter()
            .flat_map(|p| super::super::read_augmented(p).unwrap())
            .collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        let mut expected = recs;
        expected.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(all, expected);
    }
}
