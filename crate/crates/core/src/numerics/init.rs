//! Weight initialization. Each parameter draws from its own stream seeded by
//! (global seed, parameter name), so a given name initializes identically no
//! matter what else the model contains.

use super::scalar::Scalar;
use super::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn name_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()))
}

/// Fan-in scaled uniform init, U(-b, b) with b = sqrt(6 / fan_in): variance
/// 2/fan_in, which keeps activation magnitudes stable through relu stacks.
pub fn fanin_uniform<T: Scalar>(seed: u64, name: &str, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let mut rng = name_rng(seed, name);
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

pub fn constant<T: Scalar>(shape: Vec<usize>, v: f64) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    Tensor::new(shape, vec![T::from_f64(v); numel]).expect("init shape")
}
