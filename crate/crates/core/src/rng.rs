//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, counter, stream)`, so parallel
//! rollouts are reproducible regardless of scheduling.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a key triple into 64 uniformly distributed bits.
pub fn hash3(seed: u64, counter: u64, stream: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ counter) ^ stream.wrapping_mul(GOLDEN))
}

/// Uniform in the open interval (0, 1).
pub fn uniform(seed: u64, counter: u64, stream: u64) -> f64 {
    ((hash3(seed, counter, stream) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal via Box-Muller on two independent uniforms.
pub fn normal(seed: u64, counter: u64, stream: u64) -> f64 {
    let u1 = uniform(seed, counter, stream.wrapping_mul(2));
    let u2 = uniform(seed, counter, stream.wrapping_mul(2).wrapping_add(1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Derive a child seed, e.g. one per episode or per worker.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    hash3(seed, label, 0x5EED)
}
