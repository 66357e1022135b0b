//! Seedable, portable random source.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`): the stream for a
//! given seed is fixed across platforms and releases, and the full position
//! can be captured and restored for checkpointing.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// Serializable snapshot of an [`Rng`] position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` of the generator seeded with `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Rng { inner }
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below called with n = 0");
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn uniform<T: Element>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<T>> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "uniform({lo}, {hi}) requires finite lo < hi"
            )));
        }
        let span = hi - lo;
        Tensor::from_fn(shape, |_| T::from_f64(lo + span * self.next_f64()))
    }

    pub fn normal<T: Element>(
        &mut self,
        shape: &[usize],
        mean: f64,
        std: f64,
    ) -> Result<Tensor<T>> {
        if !std.is_finite() || !mean.is_finite() || std <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "normal({mean}, {std}) requires std > 0"
            )));
        }
        let dist = Normal::new(mean, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Tensor::from_fn(shape, |_| T::from_f64(dist.sample(&mut self.inner)))
    }
}
