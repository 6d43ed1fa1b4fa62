//! Reproducible Gaussian streams.
//!
//! Each path owns a ChaCha8 stream selected by `(seed, salt, path)`; draws are
//! consumed in a fixed `(step, substep, driver)` order, so a given increment
//! is a pure function of its key regardless of how paths are scheduled.
//! Normals come from the inverse CDF of an open-interval uniform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    /// Distinguishes independent drivers built from the same seed.
    pub salt: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, salt: 0 }
    }

    pub fn with_salt(self, salt: u64) -> Self {
        Self { salt, ..self }
    }

    pub fn stream(&self, path: u64) -> NormalStream {
        NormalStream::new(mix(self.seed, self.salt), path)
    }
}

// splitmix64 finaliser; keeps salted seeds far apart.
fn mix(seed: u64, salt: u64) -> u64 {
    if salt == 0 {
        return seed;
    }
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct NormalStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            normal: Normal::standard(),
        }
    }

    /// Uniform on the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u = self.next_uniform();
        self.normal.inverse_cdf(u)
    }
}
