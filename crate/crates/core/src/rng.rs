//! Deterministic 64-bit generator used for every simulated random choice.
//!
//! SplitMix64: the state advances by the golden-ratio increment
//! `0x9e3779b97f4a7c15` and each output is the state passed through the
//! finalizer
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//! z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//! z =  z ^ (z >> 31)
//! ```
//!
//! All arithmetic wraps. The generator is not cryptographically secure.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, bound)`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below(0)");
        // Lemire's multiply-shift; the bias is < 2^-64 * bound and irrelevant here.
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// A new generator whose stream is independent of this one for practical purposes.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }
}

/// The SplitMix64 output finalizer, usable as a stateless 64-bit hash.
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a seed for a named sub-stream, e.g. one per (region, provider) pair.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = mix(seed ^ 0x6a09_e667_f3bc_c908);
    for b in label.bytes() {
        h = mix(h ^ b as u64);
    }
    h
}
