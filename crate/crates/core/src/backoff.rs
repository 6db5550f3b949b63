//! Exponential backoff with full jitter.

use crate::rng::SplitMix64;

/// Retry delay schedule: the ceiling for retry `n` (1-based) is
/// `min(cap, base * factor^(n-1))`, and the actual delay is drawn uniformly
/// from `[0, ceiling]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Backoff {
    pub base_ms: u64,
    pub factor: u32,
    pub cap_ms: u64,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base_ms: 500,
            factor: 2,
            cap_ms: 30_000,
        }
    }
}

impl Backoff {
    pub fn ceiling_ms(&self, retry: u32) -> u64 {
        let mut c = self.base_ms;
        for _ in 1..retry.max(1) {
            c = c.saturating_mul(self.factor as u64);
            if c >= self.cap_ms {
                return self.cap_ms;
            }
        }
        c.min(self.cap_ms)
    }

    /// Full-jitter delay from a uniform draw `u` in `[0, 1)`.
    ///
    /// For a fixed `u` the result is non-decreasing in `retry`.
    pub fn delay_from_unit(&self, retry: u32, u: f64) -> u64 {
        let ceiling = self.ceiling_ms(retry);
        ((u * (ceiling as f64 + 1.0)).floor() as u64).min(ceiling)
    }

    pub fn delay_ms(&self, retry: u32, rng: &mut SplitMix64) -> u64 {
        self.delay_from_unit(retry, rng.next_f64())
    }
}
