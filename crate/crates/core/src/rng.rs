//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8, a counter-based stream
//! cipher generator: a 64-bit seed selects the key and an independent
//! sub-stream id selects the ChaCha stream, so work items can draw from
//! disjoint sequences regardless of scheduling order. Outputs are identical
//! across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for sub-stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
