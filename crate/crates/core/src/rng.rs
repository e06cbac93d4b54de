//! Seed fan-out.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`]. A parent seed is
//! split into child seeds with [`derive_seed`] (a splitmix64 finalizer over
//! `(parent, tag, index)`), and numbered substreams of one seed use the
//! ChaCha stream counter, so item `j` of a batch can be regenerated without
//! replaying items `0..j`.
//!
//! Normal draws go through [`standard_normal`], which calls `libm` directly
//! so the bits do not depend on which math backend other crates enable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tags keep sibling derivations apart.
pub mod tag {
    pub const REPETITION: u64 = 0x5245_5045;
    pub const PANEL: u64 = 0x5041_4e45;
    pub const MASK: u64 = 0x4d41_534b;
    pub const IMPUTE: u64 = 0x494d_5055;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ splitmix64(tag)).wrapping_add(index))
}

/// Generator for item `index` of the batch seeded by `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One `N(0, 1)` draw by the Marsaglia polar method; the second variate of
/// each accepted pair is discarded.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * rng.random::<f64>() - 1.0;
        let v = 2.0 * rng.random::<f64>() - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * libm::sqrt(-2.0 * libm::log(s) / s);
        }
    }
}
