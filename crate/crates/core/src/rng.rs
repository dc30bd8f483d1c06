//! Seeded randomness.
//!
//! All randomness flows through [`ChaCha8Rng`], whose output stream is
//! specified independently of the platform. Normal variates are produced by
//! inverting the standard normal CDF on a 53-bit uniform, so a given seed
//! yields the same sequence everywhere.

use rand::{Rng, RngCore, SeedableRng};
pub use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Creates the crate's PRNG from a 64-bit seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `(seed, stream)` with splitmix64.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform on the open interval (0, 1).
pub fn open_unit<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal inverse CDF.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal variate by inversion.
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    normal_quantile(open_unit(rng))
}

/// Student-t variate with `df` degrees of freedom built from normals.
pub fn student_t<R: RngCore>(rng: &mut R, df: usize) -> f64 {
    let z = standard_normal(rng);
    let chi2: f64 = (0..df).map(|_| standard_normal(rng).powi(2)).sum();
    z / (chi2 / df as f64).sqrt()
}

/// Rademacher variate (+1 or -1 with equal probability).
pub fn rademacher<R: Rng>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// A uniformly random permutation of `0..n`.
pub fn permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// `k` distinct indices drawn uniformly from `0..n`, returned sorted.
pub fn sample_without_replacement<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}
