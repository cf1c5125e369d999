//! Counter-style random substreams.
//!
//! Every random draw in the crate is taken from a ChaCha8 stream whose seed is
//! a hash of `(seed, path)`. Paths are extended with [`StreamKey::child`] for
//! each stage, step or particle, so results are identical no matter how work
//! is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Scalar;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of an independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    path: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: splitmix64(seed ^ 0x5EED),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives the sub-key labelled `tag`.
    #[must_use]
    pub fn child(self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            path: splitmix64(self.path ^ splitmix64(tag.wrapping_add(0xA076_1D64_78BD_642F))),
        }
    }

    /// Opaque token identifying this stream, recorded on clouds it produced.
    pub fn token(&self) -> u64 {
        splitmix64(self.path ^ self.seed)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.token())
    }

    /// Stream dedicated to particle `index`.
    pub fn particle_rng(self, index: usize) -> ChaCha8Rng {
        self.child(index as u64).rng()
    }
}

/// Tags used to carve the top-level key into purpose-specific substreams.
pub mod tags {
    pub const INITIAL: u64 = 1;
    pub const CORRECTOR: u64 = 2;
    pub const TARGET_DRAW: u64 = 3;
    pub const INTERPOLATION_NOISE: u64 = 4;
    pub const REFERENCE: u64 = 5;
    pub const ULMC_STEP: u64 = 6;
}

#[inline]
pub fn standard_normal<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

pub fn fill_standard_normal<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [T]) {
    for o in out.iter_mut() {
        *o = standard_normal(rng);
    }
}
