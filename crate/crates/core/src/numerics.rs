//! Special functions and the seeded random source shared by every module.
//!
//! The generator is xoshiro256++ seeded through SplitMix64 (the reference
//! `seed_from_u64` expansion), so a port to another language reproduces the
//! exact stream from the published algorithm:
//!
//! * `uniform()` is `(next_u64() >> 11) * 2^-53`, in `[0, 1)`.
//! * `standard_normal()` uses Box–Muller on `u1 = 1 - uniform()` and
//!   `u2 = uniform()`, returning `r cos(2πu2)` first and caching `r sin(2πu2)`
//!   for the following call.
//! * `below(n)` is the high word of the 128-bit product `next_u64() * n`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Seeded, reproducible random stream. One per worker; never shared.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream derived from this state's seed and `stream`.
    ///
    /// Does not advance `self`, so sweep workers can be derived in any order.
    pub fn derive(&self, stream: u64) -> RngState {
        RngState::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher–Yates shuffle driven by `below`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// `n` i.i.d. standard normal draws.
pub fn sample_standard_normal(rng: &mut RngState, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

/// Standard Gaussian tail probability `P(Z > x)`.
pub fn q_function(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("q_function of non-finite {x}")));
    }
    Ok(0.5 * libm::erfc(x / std::f64::consts::SQRT_2))
}

/// Digamma ψ(x) for `x > 0`: upward recurrence to `x >= 6`, then the
/// asymptotic series through the `x^-10` term.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires finite x > 0, got {x}")));
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_{2k} / (2k)
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    Ok(acc + x.ln() - 0.5 * inv - series)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `log(π^{d/2} / Γ(1 + d/2))`, the log-volume of the Euclidean unit ball.
pub fn log_unit_ball_volume(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::Domain("unit ball dimension must be at least 1".into()));
    }
    let half = d as f64 / 2.0;
    Ok(half * std::f64::consts::PI.ln() - ln_gamma(1.0 + half))
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of `softplus` for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}
