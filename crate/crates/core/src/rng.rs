//! Deterministic stream splitting for reproducible runs.
//!
//! Every randomized operation takes an explicit seed and derives independent
//! ChaCha streams from it, so results do not depend on call order or on how
//! work is sliced across threads.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// ChaCha stream `stream` of the generator seeded by `seed`.
///
/// Streams with distinct ids are statistically independent, which is what
/// makes per-trajectory / per-level randomness insensitive to parallelism.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix `(seed, tag)` into a fresh seed (splitmix64 finalizer).
///
/// Used to hand sub-seeds to nested operations that themselves split streams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One standard normal vector in `R^n`.
pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}
