//! Counter-based splitmix64 generator.
//!
//! Every random decision in the crate (weight init, shuffles, splits,
//! synthetic rendering) draws from this generator so that results are
//! reproducible across platforms and thread counts. A stream is keyed by a
//! seed plus a short list of integer tags, e.g. `(seed, class, index)` for a
//! synthetic frame or `(seed, SHUFFLE, epoch)` for a training epoch.
//!
//! The step function is the reference splitmix64:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! return z ^ (z >> 31)
//! ```

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derives an independent stream from `seed` and a list of tags.
    ///
    /// The initial state is `mix(... mix(mix(seed) ^ (tag0 + GOLDEN)) ...)`,
    /// one round per tag.
    pub fn stream(seed: u64, tags: &[u64]) -> Self {
        let mut state = mix(seed);
        for &tag in tags {
            state = mix(state ^ tag.wrapping_add(GOLDEN));
        }
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via 128-bit multiply-shift. `n` must be > 0.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal sample (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle, last index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Stream tags. Kept distinct so unrelated decisions never share a stream.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const FOLD: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const RENDER: u64 = 6;
    pub const SESSION: u64 = 7;
    pub const GRADCHECK: u64 = 8;
}
