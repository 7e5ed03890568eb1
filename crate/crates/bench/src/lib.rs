//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gaat::{ModelParams, ModelSpec, Tensor};

/// A seeded ConvReLU model on MNIST-shaped input with a batch of uniform
/// pixels and labels.
pub struct Fixture {
    pub spec: ModelSpec,
    pub params: ModelParams<f64>,
    pub x: Tensor<f64>,
    pub labels: Vec<usize>,
}

pub fn conv_relu_fixture(batch: usize, seed: u64) -> Fixture {
    let spec = ModelSpec::conv_relu_mnist();
    let params = spec.init::<f64>(seed).expect("valid spec");
    let [c, h, w] = spec.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..batch * c * h * w).map(|_| rng.random::<f64>()).collect();
    let x = Tensor::new([batch, c, h, w], data).expect("consistent shape");
    let labels = (0..batch).map(|_| rng.random_range(0..spec.classes())).collect();
    Fixture { spec, params, x, labels }
}
