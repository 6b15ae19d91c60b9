//! Named, counter-based random streams.
//!
//! Every random draw in the project comes from a [`StreamRng`]: a ChaCha8
//! keystream whose 256-bit key is derived from a 64-bit stream key. The stream
//! key for `(seed, name)` is `splitmix64(seed ^ fnv1a64(name))`; the ChaCha key
//! is the four successive `splitmix64` outputs starting from that stream key,
//! each written little-endian. Conversions:
//!
//! * `uniform()` = `(next_u64() >> 11) · 2⁻⁵³`, in `[0, 1)`.
//! * `normal()` = Box–Muller `sqrt(-2 ln(1 - u1)) · cos(2π u2)` from two
//!   consecutive uniforms; the sine branch is discarded.
//! * `below(n)` = `(next_u64() · n) >> 64` (128-bit product).
//!
//! The scheme is simple enough to reproduce outside Rust.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream key for a named stream under a global seed.
pub fn stream_key(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(name.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, name: &str) -> Self {
        Self::from_key(stream_key(seed, name))
    }

    pub fn from_key(key: u64) -> Self {
        let mut bytes = [0u8; 32];
        let mut state = key;
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&state.to_le_bytes());
            state = splitmix64(state);
        }
        Self {
            inner: ChaCha8Rng::from_seed(bytes),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in `[0, n)`; `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi, "empty range");
        lo + self.below((hi - lo) as u64 + 1) as i64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            idx.swap(i, j);
        }
        idx
    }
}
