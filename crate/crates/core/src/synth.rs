//! Seeded synthetic weights and images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::io::weights::WeightStore;
use crate::model::NetworkSpec;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    /// Probability that any weight (not BN statistic) is exactly zero.
    pub sparsity: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            seed: 0,
            sparsity: 0.0,
        }
    }
}

/// Values are rounded through `f32` so an export/import cycle is lossless.
fn narrow(x: f64) -> f64 {
    x as f32 as f64
}

/// Fills every tensor `spec` reads. Weights are uniform in `±sqrt(3 / fan_in)`,
/// BN variances are positive and gammas take both signs.
pub fn synth_weights(spec: &NetworkSpec, opts: &SynthOptions) -> Result<WeightStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = WeightStore::default();
    for (name, shape) in spec.tensors() {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = if name.ends_with(".var") {
            (0..n)
                .map(|_| narrow(rng.random_range(0.25..2.0)))
                .collect()
        } else if name.ends_with(".mean") {
            (0..n)
                .map(|_| narrow(rng.random_range(-0.5..0.5)))
                .collect()
        } else if name.ends_with(".gamma") {
            (0..n)
                .map(|_| {
                    let mag: f64 = rng.random_range(0.5..1.5);
                    narrow(if rng.random_bool(0.5) { mag } else { -mag })
                })
                .collect()
        } else if name.ends_with(".beta") {
            (0..n)
                .map(|_| narrow(rng.random_range(-0.5..0.5)))
                .collect()
        } else {
            let fan_in = if shape.len() > 1 { n / shape[0] } else { 1 };
            let bound = if name.ends_with(".bias") {
                0.1
            } else {
                (3.0 / fan_in.max(1) as f64).sqrt()
            };
            (0..n)
                .map(|_| {
                    if opts.sparsity > 0.0 && rng.random_bool(opts.sparsity.min(1.0)) {
                        0.0
                    } else {
                        narrow(rng.random_range(-bound..bound))
                    }
                })
                .collect()
        };
        store.insert(name, shape, values)?;
    }
    Ok(store)
}

/// `count` images of the network's input shape with entries uniform in `[-1, 1)`.
pub fn synth_images(spec: &NetworkSpec, count: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = spec.input_shape.to_vec();
    (0..count)
        .map(|_| Tensor::from_fn(dims.clone(), |_| narrow(rng.random_range(-1.0..1.0))))
        .collect()
}
