//! Counter-based random streams.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(seed, node, round, draw)`, so results never depend on the order in
//! which nodes are processed or on how many worker threads are used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Stream for one `(seed, node, round, draw)` key.
pub fn stream(seed: u64, node: u64, round: u64, draw: u64) -> Stream {
    let mut h = Sha256::new();
    for word in [seed, node, round, draw] {
        h.update(word.to_le_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Stream for auxiliary, non-per-node randomness (instance generation,
/// initial points). `tag` separates independent uses of the same seed.
pub fn aux_stream(seed: u64, tag: u64) -> Stream {
    stream(seed, u64::MAX, u64::MAX, tag)
}
