//! Reproducible random streams.
//!
//! Every stream is a ChaCha20 generator whose 256-bit key is the SHA-256
//! digest of a master seed followed by a path of stream identifiers, all
//! encoded as little-endian `u64`. ChaCha20 is counter based and its output
//! is fully specified, so a `(seed, path)` pair yields the same numbers on
//! every platform, and distinct paths give independent streams. Consumers
//! split work by path (per user, per epoch, per episode) rather than by
//! drawing from a shared generator, which keeps results independent of
//! scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut h = Sha256::new();
    h.update(b"cchp-stream");
    h.update(seed.to_le_bytes());
    for p in path {
        h.update(p.to_le_bytes());
    }
    let key: [u8; 32] = h.finalize().into();
    ChaCha20Rng::from_seed(key)
}

/// Derives a child seed from a parent seed and a path.
pub fn child_seed(seed: u64, path: &[u64]) -> u64 {
    use rand::RngCore;
    stream(seed, path).next_u64()
}
