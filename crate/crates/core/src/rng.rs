//! Reproducible random streams.
//!
//! Every random draw in the toolkit comes from a ChaCha8 generator keyed by the
//! master seed, with the 64-bit ChaCha stream selecting a substream:
//!
//! ```text
//! stream = (index << 2) | purpose
//! ```
//!
//! `index` is the path (or run) number and `purpose` separates process noise,
//! observation noise, initial-condition draws and the filter's initial guess. Substreams never overlap, so
//! ensembles can run in any order or in parallel and still produce identical
//! numbers, and regenerating observations never perturbs the state path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Process = 0,
    Observation = 1,
    Initial = 2,
    Estimator = 3,
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream((index << 2) | purpose as u64);
        Self { inner }
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Brownian increment over `dt`.
    #[inline]
    pub fn brownian(&mut self, dt: f64) -> f64 {
        dt.sqrt() * self.standard_normal()
    }
}
