//! Deterministic random streams.
//!
//! Every stream is derived from a parent seed and a tag by hashing, so
//! adding a method or a replication never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(tag.as_bytes());
    let out = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&out[..8]);
    u64::from_le_bytes(bytes)
}

pub fn replication_seed(master: u64, replication: usize) -> u64 {
    derive_seed(master, &format!("replication/{replication}"))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, tag: &str) -> Stream {
    stream(derive_seed(seed, tag))
}
