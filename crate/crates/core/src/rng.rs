//! Reproducible random streams. Every episode draws from its own ChaCha8
//! stream keyed by `(master_seed, episode_index)`, so results never depend
//! on how episodes are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for a single episode.
pub fn substream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Generator for a plain sequential draw (no substream split).
pub fn sequential(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
