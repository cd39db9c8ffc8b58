//! Seeded random streams.
//!
//! Every random draw in the crate comes from [`ChaCha8Rng`]. A stream is
//! identified by `(seed, stream)`: the generator is built with
//! `ChaCha8Rng::seed_from_u64(seed)` and then switched to ChaCha stream
//! `stream`. Distinct streams are independent, so per-filter or per-trial
//! generation can run in any order and still reproduce the serial result.
//!
//! Uniform variates are always derived from one `f64` draw
//! (`rng.random::<f64>()`, 53 random mantissa bits, in `[0, 1)`) so the
//! mapping to intervals and indices is fixed here and not delegated to a
//! distribution implementation that may change between `rand` releases.

use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Builds the generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with a small tag to derive an unrelated seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw on `[-bound, bound)`, computed as `bound * (2u - 1)`.
#[inline]
pub fn symmetric_uniform<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    bound * (2.0 * rng.random::<f64>() - 1.0)
}

/// Uniform index in `0..len`, computed as `floor(u * len)`.
#[inline]
pub fn uniform_index<R: Rng + ?Sized>(rng: &mut R, len: usize) -> usize {
    debug_assert!(len > 0);
    ((rng.random::<f64>() * len as f64) as usize).min(len - 1)
}
