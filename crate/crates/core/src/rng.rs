//! Named, seedable random streams.
//!
//! Every consumer of randomness (weight init, dropout masks, batch sampling,
//! scenario draws, sensor noise) gets its own ChaCha stream keyed by
//! `(seed, name)` and selected by an index, so enabling or disabling one
//! consumer never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3))
}

/// Independent generator for stream `name`, sub-stream `index`.
pub fn stream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut state = seed ^ fnv1a(name.as_bytes()).rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Stable 64-bit key for composite sub-stream indices.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x1234_5678_9ABC_DEF0u64;
    let mut out = 0;
    for &p in parts {
        state ^= p;
        out = splitmix64(&mut state);
    }
    out
}
