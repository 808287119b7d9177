//! Named random substreams derived from a single run seed.
//!
//! Every consumer of randomness asks for `stream(seed, name, index)`, so
//! ablation arms that share a seed see exactly the same data, masking and
//! sampling draws, and a resumed run re-derives the same per-step streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// FNV-1a over bytes; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, name: &str, index: u64) -> u64 {
    mix64(seed ^ mix64(fnv1a64(name.as_bytes()) ^ mix64(index)))
}

pub fn stream(seed: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(stream_seed(seed, name, index))
}

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut Rng) -> f32 {
    use rand::Rng as _;
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (crate::math::sqrt(-2.0 * crate::math::ln(u1)) * crate::math::cos(core::f64::consts::TAU * u2)) as f32
}

/// Poisson draw by inversion; fine for the small rates used for caption noise.
pub fn poisson(rng: &mut Rng, rate: f64) -> usize {
    use rand::Rng as _;
    if rate <= 0.0 {
        return 0;
    }
    let limit = crate::math::exp(-rate);
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}
