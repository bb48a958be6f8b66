//! Deterministic derivation of independent random streams.
//!
//! Every stochastic component draws from a ChaCha stream keyed by a root
//! seed plus a structural tag path (trajectory index, step, candidate, ...),
//! so parallel execution order never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Stream for `(root, tags...)`; equal inputs give equal streams.
pub fn derive_rng(root: u64, tags: &[u64]) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    for t in tags {
        h.update(t.to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}
