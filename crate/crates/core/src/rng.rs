//! Reproducible random streams.
//!
//! Every consumer of randomness (parameter draws, simulated datasets,
//! bootstrap replicates) gets its own ChaCha stream keyed by
//! `(seed, index)`. ChaCha is counter based, so stream `b` is the same no
//! matter which thread draws it or in what order replicates run.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Domain-separated child seed, so e.g. the truth simulation and the
/// replicate datasets of one study never share a stream.
pub fn derive_seed(seed: u64, domain: &str) -> u64 {
    let mut state = seed ^ 0x5851_F42D_4C95_7F2D;
    let mut h = splitmix64(&mut state);
    for b in domain.bytes() {
        state ^= u64::from(b).wrapping_mul(0x100_0000_01B3);
        h ^= splitmix64(&mut state);
    }
    h
}
