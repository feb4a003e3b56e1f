//! Portable seeded randomness.
//!
//! All stochastic parts of the toolkit draw from [`Rng`], a ChaCha8 stream
//! cipher generator (`rand_chacha::ChaCha8Rng`). ChaCha8 output is fully
//! specified and independent of platform and word size, so a given seed
//! yields bit-identical worlds, datasets and benchmark runs everywhere.
//!
//! Independent sub-streams are derived from a master seed with
//! [`derive_seed`], which folds a sequence of integer tags through the
//! SplitMix64 finalizer.

use rand::SeedableRng;

pub type Rng = rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and an ordered list of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Hashes a short ASCII label into a tag for [`derive_seed`].
pub fn tag(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for the named sub-stream `tags` of `seed`.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    rng_from_seed(derive_seed(seed, tags))
}
