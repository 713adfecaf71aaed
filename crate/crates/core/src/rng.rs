//! Seeded random streams.
//!
//! Every stochastic routine in the crate draws from a [`ChaCha8Rng`] whose
//! seed is derived from a master seed and a tuple of stream identifiers
//! (replicate index, series length, ...). Derivation uses the SplitMix64
//! finalizer, so the stream for a given replicate does not depend on how
//! replicates are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name of the generator, recorded in file headers and manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seeds derived with SplitMix64";

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a sequence of stream identifiers.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    stream.iter().fold(splitmix64(master), |acc, &id| {
        splitmix64(acc ^ splitmix64(id))
    })
}

/// Construct a generator for the given master seed and stream path.
pub fn stream_rng(master: u64, stream: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream))
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Exponential variate with the given mean by inversion: `-mean * ln(1 - u)`.
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    let u: f64 = rng.gen();
    -mean * (1.0 - u).ln()
}
