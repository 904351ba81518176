//! Seeding and random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream
//! (`rand_chacha::ChaCha8Rng`, 64-bit seed expanded with `seed_from_u64`).
//! Uniform doubles are `(next_u64 >> 11) * 2^-53`; standard normals use the
//! Box-Muller transform on two consecutive uniforms. Sub-seeds are derived
//! with the SplitMix64 finalizer so that, e.g., the seed of sample `i` of
//! class `c` does not depend on generation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a list of integers into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6f61_6d74_6f70_6f00, |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on [0, 1).
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on [lo, hi).
pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// Pair of independent standard normals (Box-Muller).
pub fn normal_pair(rng: &mut impl RngCore) -> (f64, f64) {
    let u1 = 1.0 - unit_f64(rng); // (0, 1]
    let u2 = unit_f64(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

/// Fisher-Yates shuffle driven by [`unit_f64`].
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = (unit_f64(rng) * (i + 1) as f64) as usize;
        items.swap(i, j.min(i));
    }
}
