//! Seeded pseudo-random numbers with a frozen, documented algorithm.
//!
//! Scenario documents carry bare `u64` seeds and promise that equal seeds
//! reproduce equal trajectories on any machine, so the generator is part of
//! the data contract rather than an implementation detail. The raw stream is
//! SplitMix64:
//!
//! ```text
//! state = state + 0x9E3779B97F4A7C15          (wrapping)
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9    (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB    (wrapping)
//! output = z ^ (z >> 31)
//! ```
//!
//! Derived draws are likewise fixed:
//!
//! * [`SplitMix64::uniform`]: top 53 bits scaled by 2^-53, giving [0, 1).
//! * [`SplitMix64::normal`]: Box-Muller, `sqrt(-2 ln u1) * cos(2 pi u2)`
//!   with `u1` drawn from (0, 1] so the log stays finite. The sine branch is
//!   discarded; one normal always consumes exactly two raw outputs.
//! * [`SplitMix64::below`]: `floor(uniform * n)` clamped to `n - 1`. The
//!   clamp guards the rare rounding-up at the top of the range; the
//!   truncation bias is below 2^-40 for every `n` used here.
//! * [`SplitMix64::binomial`]: inverse-CDF walk, one uniform per variate.
//!
//! All float math routes through `libm` so the stream is identical across
//! platforms and optimization levels.

use libm::{cos, log, sqrt};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_NEG53: f64 = 1.0 / 9_007_199_254_740_992.0;
const TAU: f64 = 6.283_185_307_179_586;

/// SplitMix64 generator; see the module docs for the exact algorithm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG53
    }

    /// Uniform draw in `(0, 1]`, for places where a following `ln` must stay
    /// finite.
    fn uniform_open_closed(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG53
    }

    /// Standard normal via Box-Muller; consumes exactly two raw outputs.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open_closed();
        let u2 = self.uniform();
        sqrt(-2.0 * log(u1)) * cos(TAU * u2)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0, "below(0) has no valid output");
        let draw = (self.uniform() * n as f64) as u64;
        draw.min(n - 1)
    }

    /// Binomial(n, p) variate.
    ///
    /// Inverse-CDF walk: draw one uniform, then accumulate pmf(k) from
    /// `pmf(0) = (1-p)^n` with the recurrence
    /// `pmf(k) = pmf(k-1) * ((n-k+1)/k) * (p/(1-p))` until the cumulative
    /// mass crosses the draw. O(np) steps per variate. When `(1-p)^n`
    /// underflows below 1e-300 the walk cannot start, so the sampler falls
    /// back to summing `n` explicit Bernoulli draws (`n` uniforms instead of
    /// one); both paths are seeded and deterministic.
    pub fn binomial(&mut self, n: u64, p: f64) -> u64 {
        debug_assert!((0.0..=1.0).contains(&p), "binomial p out of range: {p}");
        if n == 0 || p <= 0.0 {
            return 0;
        }
        if p >= 1.0 {
            return n;
        }
        let q = 1.0 - p;
        let pmf0 = powi(q, n);
        if pmf0 < 1e-300 {
            let mut count = 0;
            for _ in 0..n {
                if self.uniform() < p {
                    count += 1;
                }
            }
            return count;
        }
        let u = self.uniform();
        let ratio = p / q;
        let mut pmf = pmf0;
        let mut cdf = pmf;
        let mut k = 0u64;
        while u >= cdf && k < n {
            k += 1;
            pmf *= (n - k + 1) as f64 / k as f64 * ratio;
            cdf += pmf;
        }
        k
    }
}

/// `base^exp` by repeated squaring.
fn powi(base: f64, mut exp: u64) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}
