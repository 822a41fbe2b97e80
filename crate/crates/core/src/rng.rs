//! Named, reproducible random streams.
//!
//! One master seed fans out into independent ChaCha streams, one per purpose
//! (splitting, parameter init, dropout, triplet sampling). Toggling a feature
//! that consumes one stream never perturbs the draws of the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream names used by the trainer. Kept in one place so tooling and tests
/// agree on the exact derivation.
pub mod stream {
    pub const SPLIT: &str = "split";
    pub const INIT: &str = "init";
    pub const DROPOUT: &str = "dropout";
    pub const TRIPLET: &str = "triplet";
}

/// Derives the 32-byte ChaCha seed for a named stream of a master seed.
pub fn stream_seed(master_seed: u64, name: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update([0x1f]); // separator so (seed, name) pairs cannot collide
    hasher.update(name.as_bytes());
    hasher.finalize().into()
}

/// A seeded stream for the given purpose. Identical (master_seed, name)
/// always yields an identical stream.
pub fn stream_rng(master_seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(master_seed, name))
}

/// Snapshot of a ChaCha stream, enough to reproduce its position exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
