//! Stable seed derivation.
//!
//! Every random stream in the pipeline is a [`ChaCha8Rng`] whose seed is
//! derived from the user-facing seed plus a string tag, so adding a new
//! consumer or running work in parallel never perturbs existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over the seed bytes followed by the tag bytes, then a splitmix64
/// finalizer so nearby inputs give unrelated outputs.
pub fn derive(seed: u64, tag: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(tag.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix(h)
}

/// Like [`derive`] with an additional integer index (epoch, batch, cell...).
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    derive(derive(seed, tag), &index.to_string())
}

pub fn rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}

pub fn rng_indexed(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, tag, index))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
