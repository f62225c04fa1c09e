//! Block-structured MLPs.
//!
//! A model with `k ≥ 1` blocks is a stem `input → width` (affine plus
//! activation), followed by `k` blocks `h ↦ act(W·h + b)`, each optionally
//! wrapped in an identity skip `h ↦ h + act(W·h + b)`, followed by the head.
//! With `k = 0` there is no stem and the head acts on the input directly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{self, Activation, Dropout, Graph, Primitive, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub block_count: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub skip_connections: bool,
    pub dropout_rate: f64,
    pub head: Head,
}

/// The four experimental families: `A` plain, `B` = `A` with skips,
/// `C` wider plain, `D` = `C` with skips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    A,
    B,
    C,
    D,
}

impl ModelConfig {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            block_count: 0,
            hidden_width: input_dim,
            activation: Activation::Relu,
            skip_connections: false,
            dropout_rate: 0.0,
            head: Head::Linear,
        }
    }

    /// Variants `C` and `D` double `base_width`.
    pub fn variant(v: Variant, input_dim: usize, output_dim: usize, blocks: usize, base_width: usize) -> Self {
        let (width, skip) = match v {
            Variant::A => (base_width, false),
            Variant::B => (base_width, true),
            Variant::C => (2 * base_width, false),
            Variant::D => (2 * base_width, true),
        };
        Self {
            input_dim,
            output_dim,
            block_count: blocks,
            hidden_width: width,
            activation: Activation::Relu,
            skip_connections: skip,
            dropout_rate: 0.0,
            head: Head::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.block_count > 0 && self.hidden_width == 0 {
            return bad("model.hidden_width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!(
                "model.dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if self.head == Head::None {
            let last = if self.block_count == 0 {
                self.input_dim
            } else {
                self.hidden_width
            };
            if last != self.output_dim {
                return bad(format!(
                    "model.head = none needs the last hidden width ({last}) to equal output_dim ({})",
                    self.output_dim
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    He,
    Xavier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitScheme {
    pub kind: InitKind,
    pub seed: u64,
}

/// Parameter block of one dense layer inside θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlice {
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
}

impl LayerSlice {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let end = self.weight_range().end;
        end..end + if self.bias { self.fan_out } else { 0 }
    }
}

/// Immutable model description; parameters live in a separate flat θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamModel {
    config: ModelConfig,
    graph: Graph,
}

pub fn build(config: &ModelConfig) -> Result<ParamModel> {
    config.validate()?;
    let mut g = Graph::new(config.input_dim);
    let mut h = 0;
    if config.block_count > 0 {
        let z = g.affine(h, config.hidden_width)?;
        h = g.activation(z, config.activation, true)?;
        for _ in 0..config.block_count {
            let z = g.affine(h, config.hidden_width)?;
            let a = g.activation(z, config.activation, true)?;
            h = if config.skip_connections {
                g.add(h, a)
                    .map_err(|e| Error::Config(format!("skip connection: {e}")))?
            } else {
                a
            };
        }
    }
    match config.head {
        Head::Linear => {
            g.affine(h, config.output_dim)?;
        }
        Head::None => g.set_output(h)?,
    }
    Ok(ParamModel {
        config: config.clone(),
        graph: g,
    })
}

impl ParamModel {
    /// Wraps a hand-built graph, e.g. for tests of the diagnostics.
    pub fn from_graph(graph: Graph) -> Self {
        let config = ModelConfig {
            input_dim: graph.input_dim(),
            output_dim: graph.output_dim(),
            block_count: 0,
            hidden_width: graph.input_dim(),
            activation: Activation::Relu,
            skip_connections: false,
            dropout_rate: 0.0,
            head: Head::Linear,
        };
        Self { config, graph }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    pub fn input_dim(&self) -> usize {
        self.graph.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.graph.output_dim()
    }

    pub fn layers(&self) -> Vec<LayerSlice> {
        self.graph
            .nodes()
            .iter()
            .filter_map(|n| match *n {
                Primitive::Affine {
                    offset,
                    in_dim,
                    out_dim,
                    bias,
                    ..
                } => Some(LayerSlice {
                    offset,
                    fan_in: in_dim,
                    fan_out: out_dim,
                    bias,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn forward<'a>(&'a self, theta: &'a [f64], x: &[f64]) -> Result<Tape<'a>> {
        autodiff::forward(&self.graph, theta, x)
    }

    pub fn predict(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(theta, x)?.output().to_vec())
    }

    pub fn jacobian(&self, theta: &[f64], x: &[f64]) -> Result<Tensor> {
        autodiff::jacobian_params(&self.graph, theta, x)
    }

    /// Fresh parameters. He draws weights from `Normal(0, 2/fan_in)`, Xavier
    /// from `Uniform(±√(6/(fan_in+fan_out)))`; biases start at zero.
    pub fn init(&self, scheme: InitScheme) -> Vec<f64> {
        let mut theta = vec![0.0; self.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);
        for layer in self.layers() {
            let w = &mut theta[layer.weight_range()];
            match scheme.kind {
                InitKind::He => {
                    let std = (2.0 / layer.fan_in.max(1) as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("finite std");
                    w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                }
                InitKind::Xavier => {
                    let bound = (6.0 / (layer.fan_in + layer.fan_out).max(1) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                }
            }
        }
        theta
    }

    /// Training-mode evaluator with inverted dropout at every hidden
    /// activation. Masks are resampled on each call from a seeded stream.
    pub fn apply_dropout<'a>(&'a self, theta: &'a [f64], rate: f64, seed: u64) -> Result<DropoutEvaluator<'a>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(DropoutEvaluator {
            model: self,
            theta,
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

pub struct DropoutEvaluator<'a> {
    model: &'a ParamModel,
    theta: &'a [f64],
    rate: f64,
    rng: ChaCha8Rng,
}

impl<'a> DropoutEvaluator<'a> {
    pub fn forward(&mut self, x: &[f64]) -> Result<Tape<'a>> {
        autodiff::forward_with_dropout(
            &self.model.graph,
            self.theta,
            x,
            Dropout {
                rate: self.rate,
                rng: &mut self.rng,
            },
        )
    }

    pub fn predict(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output().to_vec())
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}

/// Writes θ as an 8-byte little-endian length header followed by
/// little-endian `f64` values.
pub fn write_theta(path: &Path, theta: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 8 * theta.len());
    buf.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for v in theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_theta(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_theta(&bytes)
}

pub fn decode_theta(bytes: &[u8]) -> Result<Vec<f64>> {
    let header: [u8; 8] = bytes.get(..8).and_then(|b| b.try_into().ok()).ok_or(Error::Format {
        offset: 0,
        msg: "missing 8-byte length header".into(),
    })?;
    let n = u64::from_le_bytes(header) as usize;
    let body = &bytes[8..];
    if body.len() != n.saturating_mul(8) {
        return Err(Error::Format {
            offset: 8 + body.len().min(n.saturating_mul(8)),
            msg: format!("header declares {n} values, found {} bytes", body.len()),
        });
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(k: usize, width: usize, skip: bool, act: Activation) -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            output_dim: 2,
            block_count: k,
            hidden_width: width,
            activation: act,
            skip_connections: skip,
            dropout_rate: 0.0,
            head: Head::Linear,
        }
    }

    #[test]
    fn parameter_counts() {
        let lin = build(&ModelConfig::linear(5, 3)).unwrap();
        assert_eq!(lin.param_count(), 5 * 3 + 3);
        let (i, w, o) = (3, 7, 2);
        let one = build(&mlp(1, w, false, Activation::Relu)).unwrap();
        assert_eq!(one.param_count(), i * w + w + w * w + w + w * o + o);
        let skip = build(&mlp(1, w, true, Activation::Relu)).unwrap();
        assert_eq!(skip.param_count(), one.param_count());
    }

    #[test]
    fn parameter_count_monotone() {
        let mut last = 0;
        for k in 0..5 {
            let n = build(&mlp(k, 6, false, Activation::Tanh)).unwrap().param_count();
            assert!(n > last);
            last = n;
        }
        let mut last = 0;
        for w in 1..10 {
            let n = build(&mlp(2, w, true, Activation::Tanh)).unwrap().param_count();
            assert!(n > last);
            last = n;
        }
    }

    #[test]
    fn config_validation() {
        let mut c = mlp(1, 4, false, Activation::Relu);
        c.dropout_rate = 1.0;
        assert!(matches!(build(&c), Err(Error::Config(_))));
        let mut c = mlp(1, 4, true, Activation::Relu);
        c.head = Head::None;
        assert!(matches!(build(&c), Err(Error::Config(_))));
        c.output_dim = 4;
        assert!(build(&c).is_ok());
        assert!(build(&ModelConfig::linear(0, 1)).is_err());
    }

    #[test]
    fn init_is_reproducible_with_zero_biases() {
        let m = build(&mlp(2, 8, true, Activation::Relu)).unwrap();
        for kind in [InitKind::He, InitKind::Xavier] {
            let a = m.init(InitScheme { kind, seed: 42 });
            let b = m.init(InitScheme { kind, seed: 42 });
            assert_eq!(a, b);
            let c = m.init(InitScheme { kind, seed: 43 });
            assert_ne!(a, c);
            for l in m.layers() {
                assert!(a[l.bias_range()].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn he_variance_monte_carlo() {
        // one 100 → 10000 layer gives 10⁶ weights with fan_in = 100
        let m = build(&ModelConfig::linear(100, 10_000)).unwrap();
        let theta = m.init(InitScheme {
            kind: InitKind::He,
            seed: 1,
        });
        let w = &theta[m.layers()[0].weight_range()];
        assert_eq!(w.len(), 1_000_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((var - 0.02).abs() <= 0.05 * 0.02, "variance {var}");
    }

    #[test]
    fn xavier_bounds() {
        let m = build(&ModelConfig::linear(30, 20)).unwrap();
        let theta = m.init(InitScheme {
            kind: InitKind::Xavier,
            seed: 3,
        });
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(theta.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn dropout_behaviour() {
        let m = build(&mlp(2, 8, false, Activation::Tanh)).unwrap();
        let theta = m.init(InitScheme {
            kind: InitKind::He,
            seed: 9,
        });
        let x = [0.3, -0.1, 0.7];
        let plain = m.predict(&theta, &x).unwrap();
        let mut none = m.apply_dropout(&theta, 0.0, 1).unwrap();
        assert_eq!(none.predict(&x).unwrap(), plain);

        let mut a = m.apply_dropout(&theta, 0.5, 77).unwrap();
        let mut b = m.apply_dropout(&theta, 0.5, 77).unwrap();
        let (ya, yb) = (a.predict(&x).unwrap(), b.predict(&x).unwrap());
        assert_eq!(ya, yb);
        assert_ne!(a.predict(&x).unwrap(), ya, "mask should be resampled per call");
        assert!(m.apply_dropout(&theta, 1.0, 0).is_err());
    }

    #[test]
    fn dropout_expectation_single_unit() {
        // one hidden tanh unit feeding an identity head: E[output] = undropped
        let mut g = Graph::new(1);
        let z = g.affine(0, 1).unwrap();
        g.activation(z, Activation::Tanh, true).unwrap();
        let m = ParamModel::from_graph(g);
        let theta = [0.8, 0.1];
        let plain = m.predict(&theta, &[1.0]).unwrap()[0];
        let mut eval = m.apply_dropout(&theta, 0.5, 2024).unwrap();
        let n = 10_000;
        let mean = (0..n).map(|_| eval.predict(&[1.0]).unwrap()[0]).sum::<f64>() / n as f64;
        assert!((mean - plain).abs() <= 0.03 * plain.abs(), "{mean} vs {plain}");
    }

    #[test]
    fn zero_block_weights_pass_stem_jacobian_through_skips() {
        // head = none so the output is h^{(k)} itself
        for act in [Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
            let mut cfg = mlp(3, 4, true, act);
            cfg.output_dim = 4;
            cfg.head = Head::None;
            let m = build(&cfg).unwrap();
            let mut theta = m.init(InitScheme {
                kind: InitKind::He,
                seed: 5,
            });
            let layers = m.layers();
            let stem = layers[0];
            for l in &layers[1..] {
                theta[l.weight_range()].iter_mut().for_each(|v| *v = 0.0);
                theta[l.bias_range()].iter_mut().for_each(|v| *v = 0.0);
            }
            for b in theta[stem.bias_range()].iter_mut() {
                *b = 0.1;
            }
            let x = [0.5, -1.0, 2.0];
            let j = m.jacobian(&theta, &x).unwrap();
            // ∂h1_o/∂W[o][i] = act'(z_o)·x_i, ∂h1_o/∂b[o] = act'(z_o)
            let w = &theta[stem.weight_range()];
            for o in 0..4 {
                let z: f64 = (0..3).map(|i| w[o * 3 + i] * x[i]).sum::<f64>() + 0.1;
                let d = act.derivative(z);
                for out in 0..4 {
                    for i in 0..3 {
                        let want = if out == o { d * x[i] } else { 0.0 };
                        assert!((j.get(stem.offset + o * 3 + i, out) - want).abs() <= 1e-12);
                    }
                    let want = if out == o { d } else { 0.0 };
                    assert!((j.get(stem.bias_range().start + o, out) - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn theta_checkpoint_roundtrip() {
        let dir = std::env::temp_dir().join(format!("deepbound-theta-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.bin");
        let theta = vec![1.5, -0.0, f64::MIN_POSITIVE, 3e300];
        write_theta(&path, &theta).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], &4u64.to_le_bytes());
        assert_eq!(bytes.len(), 8 + 32);
        assert_eq!(read_theta(&path).unwrap(), theta);
        assert!(decode_theta(&bytes[..20]).is_err());
        assert!(decode_theta(&bytes[..4]).is_err());
        fs::remove_dir_all(dir).ok();
    }
}
