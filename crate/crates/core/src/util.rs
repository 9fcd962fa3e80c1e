//! Stable hashing and seeded random streams shared across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh64::{xxh64, Xxh64};

/// The random source used everywhere. ChaCha8 is portable across platforms and
/// crate versions, which keeps seeded artifacts reproducible.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// XXH64 of `bytes` with seed 0.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    xxh64(bytes, 0)
}

/// Incremental hasher over a length-prefixed canonical encoding, so that
/// `("ab", "c")` and `("a", "bc")` hash differently.
#[derive(Clone)]
pub struct KeyHasher(Xxh64);

impl KeyHasher {
    pub fn new(seed: u64) -> Self {
        Self(Xxh64::new(seed))
    }

    pub fn bytes(mut self, b: &[u8]) -> Self {
        self.0.update(&(b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.update(&v.to_le_bytes());
        self
    }

    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    pub fn finish(self) -> u64 {
        self.0.digest()
    }
}

/// Seed for a child stream identified by `(parent, label, index)`.
pub fn derive_seed(parent: u64, label: &str, index: u64) -> u64 {
    KeyHasher::new(parent).str(label).u64(index).finish()
}

/// Seed for a per-record stream; depends only on the record id, never on its position.
pub fn record_seed(parent: u64, label: &str, record_id: &str) -> u64 {
    KeyHasher::new(parent).str(label).str(record_id).finish()
}
