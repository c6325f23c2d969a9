//! Seeded randomness with a published stream-splitting rule.
//!
//! Generator: ChaCha8 (`rand_chacha`, pinned in Cargo.toml). A 64-bit seed is
//! expanded to the 256-bit key by `SeedableRng::seed_from_u64`; independent
//! substreams reuse the key and differ only in the 64-bit ChaCha stream id.
//! Replica `k` of an experiment with base seed `s` therefore draws from
//! `stream(s, k)`, which is independent of every other replica and stable
//! across runs and platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root generator for a seed (stream id 0).
pub fn root(seed: u64) -> ChaCha8Rng {
    stream(seed, 0)
}

/// Substream `stream_id` of `seed`.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
