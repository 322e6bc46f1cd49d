//! Model initialization.
//!
//! All draws come from one ChaCha8 stream derived from `(seed, MODEL_INIT)`,
//! in a fixed order so a seed pins every weight:
//!
//! 1. value supports (skipped when the layout is evenly spaced),
//! 2. parameters in declaration order (encoder convs, encoder dense,
//!    per-action keys, decoder dense, decoder deconvs), elements row-major.
//!
//! Convolution and transposed-convolution kernels use Xavier-uniform
//! (`a = sqrt(6 / (fan_in + fan_out))` with channel*kernel*kernel fans);
//! dense weights and keys are N(0, 0.1); biases start at zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Parameter;
use crate::error::Result;
use crate::rng::{chacha, stream};
use crate::tensor::Tensor;

use super::{assemble, expected_parameters, IDQNModel, ModelConfig, ValueLayout};

const DENSE_STD: f64 = 0.1;

pub(super) fn init(config: ModelConfig, seed: u64) -> Result<IDQNModel> {
    let shapes = config.trace_shapes()?;
    let mut rng = chacha(seed, stream::MODEL_INIT);

    let values = match config.value_layout {
        ValueLayout::RandomUniform => draw_values(&config, &mut rng),
        ValueLayout::EvenlySpaced => (0..config.keys_per_action)
            .map(|i| {
                config.v_min
                    + (config.v_max - config.v_min) * (2 * i + 1) as f64
                        / (2 * config.keys_per_action) as f64
            })
            .collect(),
    };

    let normal = Normal::new(0.0, DENSE_STD).expect("finite std");
    let params = expected_parameters(&config, &shapes)
        .into_iter()
        .map(|(name, shape)| {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".b") {
                vec![0.0; numel]
            } else if name.contains("conv") {
                let kk = shape[2] * shape[3];
                let (fan_in, fan_out) = if name.starts_with("dec.") {
                    // deconv kernels are [in_channels, out_channels, k, k]
                    (shape[0] * kk, shape[1] * kk)
                } else {
                    // conv kernels are [filters, in_channels, k, k]
                    (shape[1] * kk, shape[0] * kk)
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-a..a)).collect()
            } else {
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            };
            Parameter::new(name, Tensor::new(shape, data).expect("init shape"))
        })
        .collect();

    Ok(assemble(config, shapes, params, values))
}

/// N distinct draws strictly inside the open interval, sorted ascending.
fn draw_values(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut values: Vec<f64> = Vec::with_capacity(config.keys_per_action);
    while values.len() < config.keys_per_action {
        let v = rng.random_range(config.v_min..config.v_max);
        if v > config.v_min && values.iter().all(|&u| u != v) {
            values.push(v);
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values
}
