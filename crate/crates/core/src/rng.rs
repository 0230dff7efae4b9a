//! Keyed random streams. Every consumer draws from its own
//! `(seed, entity, purpose)` stream so the draws never depend on the order in
//! which entities, replications or worker threads are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Placement = 1,
    Arrivals = 2,
    Backoff = 3,
    Routing = 4,
    PacketSize = 5,
    MonteCarlo = 6,
}

pub fn stream(seed: u64, entity: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((entity << 8) | purpose as u64);
    rng
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D1_049B_B133_111D);
    z ^ (z >> 31)
}

/// Standard normal deviate addressed by `(seed, a, b)`; symmetric in `a`, `b`.
pub fn pair_normal(seed: u64, a: u64, b: u64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let k = splitmix64(seed ^ splitmix64(lo.wrapping_mul(0x1_0000_0001) ^ splitmix64(hi)));
    let u1 = ((splitmix64(k) >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (splitmix64(k ^ 0xA5A5_A5A5) >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
