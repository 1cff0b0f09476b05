//! Deterministic random streams.
//!
//! Every random draw in a simulation is addressed by a `(master seed, path)`
//! pair. The path is folded into a ChaCha key and the final component picks
//! the ChaCha stream, so any unit of work can reconstruct its generator
//! without touching shared state. Results therefore do not depend on the
//! order in which work units run or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    mix64(parent ^ mix64(label.wrapping_add(GOLDEN)))
}

/// Generator keyed by `seed`, positioned on ChaCha stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Convenience for single-stream consumers (tests, one-off draws).
pub fn seeded(seed: u64) -> SimRng {
    stream_rng(seed, 0)
}
