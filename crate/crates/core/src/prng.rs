//! Seeded linear congruential generator.
//!
//! Every stochastic decision in the pipeline draws from [`Lcg`]. The
//! recurrence is `X[n+1] = (a * X[n] + c) mod 2^31` with the Numerical
//! Recipes constants, and a uniform variate is `X[n+1] / 2^31`.
//!
//! Generation never threads one stream through the whole dataset. Each
//! sample slot gets its own stream from [`Lcg::for_sample`], so output does
//! not depend on the order in which slots are produced or on the number of
//! worker threads. The master stream ([`Lcg::new`]) is reserved for the
//! one-time segment shuffle.

use thiserror::Error;

pub const MULTIPLIER: u64 = 1_103_515_245;
pub const INCREMENT: u64 = 12_345;
pub const MODULUS: u64 = 1 << 31;

/// Odd constant used to scatter sample indices across the state space.
pub const SAMPLE_MIX: u64 = 2_654_435_761;

/// Number of steps a per-sample stream is advanced before first use.
pub const SAMPLE_WARMUP: usize = 3;

/// Seed used when the caller supplies none.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PrngError {
    #[error("invalid range: lower bound {lo} exceeds upper bound {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("invalid probability {0}: must lie in [0, 1]")]
    InvalidProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lcg {
    state: u32,
}

impl Lcg {
    /// Creates a stream whose first state is `seed mod 2^31`.
    pub fn new(seed: u64) -> Self {
        Lcg {
            state: (seed % MODULUS) as u32,
        }
    }

    /// Derives the independent stream for sample slot `index`.
    ///
    /// `state0 = (seed XOR ((index * 2654435761) mod 2^31)) mod 2^31`, then
    /// three warm-up steps.
    pub fn for_sample(master_seed: u64, index: u64) -> Self {
        let mixed = index.wrapping_mul(SAMPLE_MIX) % MODULUS;
        let mut lcg = Lcg::new((master_seed ^ mixed) % MODULUS);
        for _ in 0..SAMPLE_WARMUP {
            lcg.step();
        }
        lcg
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    /// Advances one step and returns the new raw state.
    #[inline]
    pub fn step(&mut self) -> u32 {
        // a < 2^31 and X < 2^31, so the product stays below 2^62.
        let next = (MULTIPLIER * u64::from(self.state) + INCREMENT) % MODULUS;
        self.state = next as u32;
        self.state
    }

    /// Next uniform variate in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        f64::from(self.step()) / MODULUS as f64
    }

    /// Value-style variant of [`Lcg::next_f64`].
    pub fn advance(self) -> (f64, Lcg) {
        let mut next = self;
        let u = next.next_f64();
        (u, next)
    }

    /// `lo + U * (hi - lo)`, a value in `[lo, hi)` (or exactly `lo` when
    /// the range is degenerate).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> Result<f64, PrngError> {
        if !(lo <= hi) {
            return Err(PrngError::InvalidRange { lo, hi });
        }
        Ok(lo + self.next_f64() * (hi - lo))
    }

    /// Integer in the inclusive range `[lo, hi]`, computed as
    /// `floor(uniform_range(lo, hi + 1))`.
    pub fn int_range(&mut self, lo: i64, hi: i64) -> Result<i64, PrngError> {
        if lo > hi {
            return Err(PrngError::InvalidRange {
                lo: lo as f64,
                hi: hi as f64,
            });
        }
        let span = (hi - lo + 1) as f64;
        let value = lo + (self.next_f64() * span).floor() as i64;
        Ok(value.min(hi))
    }

    /// `true` iff the next uniform is below `p`.
    pub fn bernoulli(&mut self, p: f64) -> Result<bool, PrngError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(PrngError::InvalidProbability(p));
        }
        Ok(self.next_f64() < p)
    }

    /// Standard normal deviate via Box-Muller. Consumes exactly two uniforms.
    pub fn gaussian(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        let u2 = self.next_f64();
        if u1 == 0.0 {
            u1 = 1.0 / MODULUS as f64;
        }
        box_muller(u1, u2)
    }
}

impl Default for Lcg {
    fn default() -> Self {
        Lcg::new(DEFAULT_SEED)
    }
}

/// `sqrt(-2 ln u1) * cos(2 pi u2)`.
#[inline]
pub fn box_muller(u1: f64, u2: f64) -> f64 {
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
