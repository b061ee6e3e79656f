//! Seed derivation and the counter-based generator used everywhere a
//! reproducible random stream is needed.
//!
//! All streams are ChaCha8 keyed by a 64-bit seed; ChaCha is counter-based, so
//! the output for a given seed is identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a tuple of words into one seed.
pub fn mix64(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5347_5043_u64, |h, &w| splitmix64(h ^ splitmix64(w)))
}

/// Seed used to subsample a patch during encoding.
pub fn patch_seed(frame_id: u32, node_id: u32, cell_index: u32) -> u64 {
    mix64(&[frame_id as u64, node_id as u64, cell_index as u64])
}

/// Seed of the decoder's coarse initialization; derived from ids only so it
/// never has to be transmitted.
pub fn decode_seed(node_id: u32, cell_index: u32) -> u64 {
    mix64(&[node_id as u64, cell_index as u64])
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
