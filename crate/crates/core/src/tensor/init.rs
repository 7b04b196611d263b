//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::Result;

/// He-normal: N(0, 2/fan_in).
pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Tensor> {
    normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Result<Tensor> {
    let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}
