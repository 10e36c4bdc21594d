//! Keyed random streams.
//!
//! Every random quantity in the pipeline is drawn from a ChaCha8 stream
//! whose 256-bit seed is derived from the run seed and a path of keys
//! (stage tag, replicate, draw, row, ...). The derivation folds each key
//! into a SplitMix64 state and emits four 64-bit words, so two different
//! key paths give unrelated streams and the same path always gives the
//! same stream regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stage tags used as the first key of a stream path.
pub mod stage {
    pub const SIMULATE: u64 = 0x5349_4d55;
    pub const AMPUTE: u64 = 0x414d_5055;
    pub const IMPUTE: u64 = 0x494d_5055;
    pub const BASELINE: u64 = 0x4241_5345;
    pub const BENCH: u64 = 0x4245_4e43;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit sub-seed from `seed` and a key path.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    for &k in keys {
        state ^= k.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ acc;
        acc = splitmix64(&mut state);
    }
    acc
}

/// Open the stream identified by `seed` and a key path.
pub fn stream(seed: u64, keys: &[u64]) -> Stream {
    let mut state = derive_seed(seed, keys);
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
