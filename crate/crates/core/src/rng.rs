//! Seed derivation.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream whose seed is
//! a deterministic mix of a root seed and a tuple of stream identifiers
//! (trajectory index, state index, rollout index, ...). Streams never share state,
//! so work can be split across threads without changing any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with an ordered list of stream identifiers.
pub fn derive_seed(seed: u64, ids: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x7461_7571_5f72_6e67);
    for &id in ids {
        h = splitmix64(h ^ splitmix64(id.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn substream(seed: u64, ids: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, ids))
}

/// Hash of a real vector's bit pattern, used to key per-input noise.
pub fn hash_reals(values: &[f64]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for v in values {
        // -0.0 and 0.0 compare equal and should receive the same noise
        let bits = if *v == 0.0 { 0 } else { v.to_bits() };
        h = splitmix64(h ^ bits);
    }
    h
}
