//! Reproducible random streams.
//!
//! Every logical stream (one price path, one batch of initial stocks, ...)
//! is a ChaCha8 generator keyed by `(seed, stream)`, so a path can be
//! regenerated on its own without replaying the rest of its batch.
//! Standard normals are produced by the inverse CDF of an open-interval
//! uniform, which gives identical draws on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc_inv;

const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

/// Quantile function of the standard normal distribution.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Mixes a tag into a seed (splitmix64 finalizer) to open independent
/// seed domains, e.g. training versus evaluation.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod domain {
    pub const TRAIN: u64 = 0x7472_6169_6e00;
    pub const EVAL: u64 = 0x6576_616c_0000;
    pub const STOCK: u64 = 0x7374_6f63_6b00;
    pub const INIT: u64 = 0x696e_6974_0000;
    pub const DP: u64 = 0x6470_0000_0000;
    pub const REGRESS: u64 = 0x7265_6772_0000;
}
