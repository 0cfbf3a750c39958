// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Seeded parameter initializers.

use rand::Rng;

use super::Tensor;

/// Uniform in `±sqrt(1 / fan_in)`.
pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
