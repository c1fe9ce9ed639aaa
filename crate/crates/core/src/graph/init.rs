use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{GraphSpec, Init};
use crate::tensor::Tensor;

/// Named parameter tensors, ordered by name.
pub type Weights = BTreeMap<String, Tensor>;

/// Seeded initialisation of every declared weight, in declaration order.
pub fn init_weights(graph: &GraphSpec, slope: f32, seed: u64) -> Weights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = (2.0 / (1.0 + slope as f64 * slope as f64)).sqrt();
    graph
        .weights
        .iter()
        .map(|w| {
            let t = match w.init {
                Init::Zeros => Tensor::zeros(w.shape),
                Init::Const(v) => Tensor::full(w.shape, v),
                Init::HeUniform => {
                    let fan_in = (w.shape.c * w.shape.h * w.shape.w).max(1) as f64;
                    let bound = gain * (3.0 / fan_in).sqrt();
                    let data = (0..w.shape.numel())
                        .map(|_| rng.gen_range(-bound..bound) as f32)
                        .collect();
                    Tensor::new(w.shape, data).expect("declared shape")
                }
            };
            (w.name.clone(), t)
        })
        .collect()
}

/// Every weight set to zero.
pub fn zero_weights(graph: &GraphSpec) -> Weights {
    graph
        .weights
        .iter()
        .map(|w| (w.name.clone(), Tensor::zeros(w.shape)))
        .collect()
}

pub fn count_weight_values(weights: &Weights) -> u64 {
    weights.values().map(|t| t.numel() as u64).sum()
}
