//! Fixtures shared by the benchmarks.

use deepbound::model::{self, ParamModel};
use deepbound::{Activation, InitKind, InitScheme, ModelConfig, Tensor};

/// He-initialised MLP with `blocks` hidden blocks of `width` units.
pub fn mlp(input_dim: usize, output_dim: usize, blocks: usize, width: usize) -> (ParamModel, Vec<f64>) {
    let mut cfg = ModelConfig::linear(input_dim, output_dim);
    cfg.block_count = blocks;
    cfg.hidden_width = width;
    cfg.activation = Activation::Tanh;
    let m = model::build(&cfg).expect("valid config");
    let theta = m.init(InitScheme {
        kind: InitKind::He,
        seed: 1,
    });
    (m, theta)
}

/// Deterministic dense symmetric positive semi-definite `n × n` matrix.
pub fn gram_matrix(n: usize) -> Tensor {
    let data = (0..3 * n * n)
        .map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0)
        .collect();
    Tensor::from_vec(&[3 * n, n], data).expect("shape").gram()
}

pub fn series(len: usize, phase: f64) -> Vec<f64> {
    (0..len)
        .map(|i| (i as f64 * 0.05 + phase).sin() + i as f64 * 1e-3)
        .collect()
}
