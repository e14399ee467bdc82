//! Deterministic, stream-addressable random numbers.
//!
//! Every random draw in this crate flows through [`RngStream`], a thin wrapper
//! over the ChaCha8 keystream (via `rand_chacha` 0.3). ChaCha is a counter-mode
//! cipher, so a `(seed, stream_id)` pair names a fixed 2^64-block keystream:
//! identical pairs produce identical draws on every platform, and distinct
//! stream ids produce independent sequences.
//!
//! All derived draws (floats, indices, normals, shuffles) are implemented
//! here, on top of raw `next_u64`, so the byte-level behaviour is fully
//! specified by this file plus the ChaCha8 definition.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream-id allocation. Model streams live below [`DATA_BASE`]; everything
/// data-related is reserved at or above it so regenerating a split can never
/// perturb model initialization.
pub mod stream_ids {
    /// Model init streams: `model_stream_base + model_index`.
    pub const MODEL_BASE: u64 = 0;
    /// First id reserved for dataset generation.
    pub const DATA_BASE: u64 = 1_000_000;
    /// Collage split generation: `DATA_BASE + split offset` (see datasets).
    pub const SPLIT_TRAIN_ALL: u64 = DATA_BASE;
    pub const SPLIT_TEST_SINGLE: u64 = DATA_BASE + 10; // + block index
    pub const SPLIT_UPPER_BOUND: u64 = DATA_BASE + 20; // + block index
    /// Synthetic block patterns, shared across splits: `+ block index`.
    pub const SYNTHETIC_PATTERN: u64 = DATA_BASE + 100;
    /// Trainer minibatch sampling.
    pub const MINIBATCH: u64 = 2_000_000;
    /// Per-model input-dropout masks: `DROPOUT + model_stream_base + index`.
    pub const DROPOUT: u64 = 3_000_000;
}

/// One deterministic random stream, identified by `(seed, stream_id)`.
///
/// Single-owner mutable state: one stream per thread of work, never shared.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    stream_id: u64,
    spare_normal: Option<f64>,
}

/// Fixed generator identity, recorded in run manifests.
pub const ALGORITHM_ID: &str = "chacha8/rand_chacha-0.3";

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            rng,
            seed,
            stream_id,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `[0, n)` by 128-bit multiply-shift.
    ///
    /// Bias is bounded by `n / 2^64`, irrelevant at the pool sizes used here.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Fair coin: the top bit of one draw.
    pub fn coin(&mut self) -> u8 {
        (self.next_u64() >> 63) as u8
    }

    /// Standard normal via Box-Muller; the paired value is kept for the next
    /// call so draws cost one transform per two values.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let z = match self.spare_normal.take() {
            Some(z) => z,
            None => {
                // u1 in (0, 1] so the log stays finite.
                let u1 = 1.0 - self.next_f64();
                let u2 = self.next_f64();
                let r = (-2.0 * u1.ln()).sqrt();
                let theta = 2.0 * core::f64::consts::PI * u2;
                self.spare_normal = Some(r * theta.sin());
                r * theta.cos()
            }
        };
        mean + sd * z
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pairs_reproduce_one_million_draws() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let same = (0..1000).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn f64_range_and_determinism() {
        let mut r = RngStream::new(1, 0);
        for _ in 0..10_000 {
            let v = r.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
        let mut r2 = RngStream::new(1, 0);
        let mut r3 = RngStream::new(1, 0);
        for _ in 0..100 {
            assert_eq!(r2.next_f64().to_bits(), r3.next_f64().to_bits());
        }
    }

    #[test]
    fn index_stays_in_range() {
        let mut r = RngStream::new(9, 3);
        for n in 1..50usize {
            for _ in 0..100 {
                assert!(r.index(n) < n);
            }
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut r = RngStream::new(5, 0);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let v = r.normal(0.0, 1.0);
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut r = RngStream::new(11, 0);
        let mut v: Vec<usize> = (0..100).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, (0..100).collect::<Vec<_>>());
    }
}
