//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha8 generator identified by a
//! `(seed, stream)` pair, so parallel or reordered work still reproduces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids reserved for specific consumers, so two consumers sharing a seed
/// never overlap.
pub mod streams {
    pub const VALIDATION_BASE: u64 = 1 << 40;
    pub const TRAIN_SHUFFLE: u64 = 1 << 41;
    pub const EVAL_MASKS: u64 = 1 << 42;
    pub const INIT: u64 = 1 << 43;
    pub const ROLLOUT_BASE: u64 = 1 << 44;
}
