//! Keyed random streams.
//!
//! Every consumer of randomness asks for a stream by `(master seed, purpose tag)`.
//! The stream key is a SHA-256 of both, fed to a ChaCha8 generator, so adding a new
//! consumer never shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(master: u64, tag: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Derive a child 64-bit seed from a master seed and a list of path components.
pub fn derive_seed(master: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for p in parts {
        hasher.update((p.len() as u64).to_le_bytes());
        hasher.update(p.as_bytes());
    }
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Short hex digest used to tag provenance of configs, datasets and trajectories.
pub fn digest_bytes(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_f64s<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    let out = hasher.finalize();
    out[..8].iter().map(|b| format!("{b:02x}")).collect()
}
