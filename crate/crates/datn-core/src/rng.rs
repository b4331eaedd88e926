//! Seeded RNG construction. ChaCha8 is used everywhere so that streams
//! are reproducible across platforms for a pinned dependency set.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform index in `0..n`.
pub fn rand_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    rng.gen_range(0..n)
}

/// Tensor with entries drawn uniformly from `[lo, hi)`.
pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}
