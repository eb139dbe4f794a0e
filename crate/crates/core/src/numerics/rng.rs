//! SplitMix64, the single random source behind every seeded operation.
//!
//! State update and output mix (Steele, Lea & Flood):
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! out = z ^ (z >> 31)
//! ```
//!
//! Uniform reals take the top 53 bits (`f64`) or 24 bits (`f32`) of one
//! output. Bounded integers use the high half of a 128-bit product.

use super::{Real, Tensor};
use crate::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named sub-stream (`stream`) and position (`index`).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix(mix(master ^ mix(stream.wrapping_add(GOLDEN))).wrapping_add(index.wrapping_mul(GOLDEN)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.next_f64();
        if v >= hi {
            hi.prev_float()
        } else {
            v
        }
    }

    /// Uniform in `[lo, hi)` at the precision of `T`.
    pub fn uniform_real<T: Real>(&mut self, lo: T, hi: T) -> T {
        let u = if std::mem::size_of::<T>() == 4 {
            T::lit((self.next_u64() >> 40) as f64 * (1.0 / (1u64 << 24) as f64))
        } else {
            T::lit(self.next_f64())
        };
        let v = lo + (hi - lo) * u;
        if v >= hi {
            hi.prev_float()
        } else {
            v
        }
    }

    /// Standard normal draw (Box-Muller, cosine branch; two uniforms per draw).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle, last position first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Tensor of i.i.d. uniform values in `[lo, hi)` drawn from `SplitMix64::new(seed)`.
pub fn rng_uniform<T: Real>(seed: u64, lo: T, hi: T, shape: &[usize]) -> Result<Tensor<T>> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("rng_uniform needs lo < hi, got [{lo}, {hi})")));
    }
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("rng_uniform: invalid shape {shape:?}")));
    }
    let n = shape.iter().product();
    let mut rng = SplitMix64::new(seed);
    let data = (0..n).map(|_| rng.uniform_real(lo, hi)).collect();
    Tensor::from_vec(shape, data)
}
