//! Fixtures shared by the benchmarks.

use mefsfi::image::Plane;
use mefsfi::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded uniform values in `[0, 1)`.
pub fn uniform(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen()).collect()
}

pub fn plane(w: usize, h: usize, seed: u64) -> Plane {
    Plane::new(w, h, uniform(w * h, seed)).expect("dims match")
}

pub fn tensor(s: Shape, seed: u64) -> Tensor {
    Tensor::new(s, uniform(s.numel(), seed)).expect("dims match")
}
