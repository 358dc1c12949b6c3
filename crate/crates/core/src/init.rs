//! Deterministic parameter initialization and seed plumbing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The one RNG used everywhere; a fixed algorithm keeps streams reproducible.
pub type SeedRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> SeedRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer; decorrelates (seed, index) pairs so per-item streams
/// are independent of iteration order.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[-bound, bound)`.
pub fn uniform_symmetric(rng: &mut SeedRng, bound: f64) -> f64 {
    (rng.random::<f64>() * 2.0 - 1.0) * bound
}

/// Kaiming-uniform init for ReLU fan-in: `bound = sqrt(6 / fan_in)`.
/// Draws are in f64 and narrowed, so f32 and f64 builds see the same stream.
pub fn kaiming_uniform<T: Scalar>(rng: &mut SeedRng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::from_f64(uniform_symmetric(rng, bound)))
        .collect();
    Tensor::new(shape, data).unwrap().requires_grad()
}
