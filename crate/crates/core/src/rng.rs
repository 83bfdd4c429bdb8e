//! Replicate-indexed random streams.
//!
//! Every replicate draws from its own ChaCha8 keystream. The key is derived
//! from the master seed and the stream id selects one of 2^64 independent
//! keystreams, so replicate `k` can be regenerated without touching
//! replicates `0..k` and results do not depend on how replicates are spread
//! over worker threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("exponential rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("floor must be finite, got {0}")]
    InvalidFloor(f64),
}

/// A deterministic random stream identified by `(master_seed, stream_index)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
    master_seed: u64,
    stream_index: u64,
}

const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut state = master_seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(stream_index);
        Self {
            inner,
            master_seed,
            stream_index,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform on the open interval (0, 1); never returns 0 or 1.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * TWO_POW_M53
    }

    /// A standard exponential variate `-ln U`.
    ///
    /// Rate-`r` exponentials are obtained as `std_exp() / r`, so a shared
    /// uniform yields a draw that is decreasing in the rate.
    #[inline]
    pub fn std_exp(&mut self) -> f64 {
        -self.uniform().ln()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub fn make_stream(master_seed: u64, stream_index: u64) -> RngStream {
    RngStream::new(master_seed, stream_index)
}

/// Inverse transform: the Exp(`rate`) value attached to the uniform `u`.
#[inline]
pub fn exponential_from_uniform(u: f64, rate: f64) -> f64 {
    -u.ln() / rate
}

pub fn sample_exponential(stream: &mut RngStream, rate: f64) -> Result<f64, KernelError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(KernelError::InvalidRate(rate));
    }
    Ok(exponential_from_uniform(stream.uniform(), rate))
}
