//! Random stream layout.
//!
//! Every stream is a `ChaCha8Rng` keyed by `seed_from_u64(run_seed)`; the
//! 64-bit ChaCha stream id selects the consumer. Stream 0 drives bootstrap
//! resampling and stream `k` (1-based) drives the Wiener increments of
//! expert `k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier written into run metadata so a run can be replayed elsewhere.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), key = seed_from_u64(seed)";

pub const BOOTSTRAP_STREAM: u64 = 0;

pub fn bootstrap_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, BOOTSTRAP_STREAM)
}

/// Noise stream of the zero-based expert `expert`.
pub fn expert_stream(seed: u64, expert: usize) -> ChaCha8Rng {
    stream(seed, expert as u64 + 1)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
