//! Deterministic random stream shared by every component of the toolkit.
//!
//! The generator is SplitMix64. Each draw advances the 64-bit state by the
//! golden-ratio increment and returns a scrambled copy of it:
//!
//! ```text
//! state = state + 0x9E3779B97F4A7C15            (wrapping)
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9      (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB      (wrapping)
//! return z ^ (z >> 31)
//! ```
//!
//! A stream created from seed `s` starts with `state = s`, so the first draw
//! of seed 0 is `0xE220A8397B1DCDAF`. Derived quantities:
//!
//! * `below(k)` is `next() % k` (modulo bias accepted; `k` is always small).
//! * `uniform()` is `(next() >> 11) * 2^-53`, a double in `[0, 1)`.
//! * `normal()` is Box-Muller on two uniforms `u1, u2`:
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`; the sine branch is discarded.
//! * `shuffle(n)` is Fisher-Yates from the top: for `i = n-1 .. 1`,
//!   `j = below(i + 1)`, swap `i` and `j`, starting from the identity.
//!
//! Any implementation in another language that follows these rules
//! reproduces samplers, splits and initializations bit-exactly.

use crate::error::{ReidError, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 stream. Single owner; child streams are seeded from parent draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// `next() % k`. Panics if `k == 0`.
    pub fn below(&mut self, k: u64) -> u64 {
        assert!(k > 0, "below(0)");
        self.next() % k
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Seeds a child stream from the next parent draw.
    pub fn child(&mut self) -> RngStream {
        RngStream::new(self.next())
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn shuffle(&mut self, n: usize) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(ReidError::EmptyDomain);
        }
        let mut perm: Vec<usize> = (0..n).collect();
        self.shuffle_in_place(&mut perm);
        Ok(perm)
    }

    /// Fisher-Yates over an existing slice, same draw sequence as [`shuffle`](Self::shuffle).
    pub fn shuffle_in_place<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
