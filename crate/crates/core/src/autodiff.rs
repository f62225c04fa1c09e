//! Reverse-mode differentiation over a small static graph of dense vector
//! primitives, specialised to gradients with respect to one flat parameter
//! vector.
//!
//! A [`Graph`] is the program (affine layers, activations, softmax, adds and
//! concatenations). [`forward`] evaluates it for one input and records every
//! intermediate value on a [`Tape`]; [`Tape::vjp_params`] runs the reverse
//! sweep for a cotangent on the output. The parameter Jacobian is assembled
//! from one reverse sweep per output component over the same tape.

use rand::Rng;

use crate::error::{domain, Error, Result};
pub use crate::linalg::Tensor;

/// Default upper bound on the bytes a dense parameter Jacobian may occupy.
pub const DEFAULT_JACOBIAN_BUDGET: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at `x`. The ReLU subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Input,
    /// A slice of θ used directly as a value.
    Param {
        offset: usize,
        len: usize,
    },
    /// `W·h + b`; `W` is `out × in` row-major at `offset`, `b` follows it
    /// when `bias` is set.
    Affine {
        input: NodeId,
        offset: usize,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    },
    Activation {
        input: NodeId,
        kind: Activation,
        dropout_site: bool,
    },
    Softmax {
        input: NodeId,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::Input => "input",
            Primitive::Param { .. } => "param",
            Primitive::Affine { .. } => "affine",
            Primitive::Activation { .. } => "activation",
            Primitive::Softmax { .. } => "softmax",
            Primitive::Add { .. } => "add",
            Primitive::Concat { .. } => "concat",
        }
    }
}

/// A topologically ordered program of primitives. Node 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    nodes: Vec<Primitive>,
    dims: Vec<usize>,
    param_count: usize,
    output: NodeId,
}

impl Graph {
    pub fn new(input_dim: usize) -> Self {
        Self {
            nodes: vec![Primitive::Input],
            dims: vec![input_dim],
            param_count: 0,
            output: 0,
        }
    }

    fn push(&mut self, p: Primitive, dim: usize) -> NodeId {
        self.nodes.push(p);
        self.dims.push(dim);
        self.output = self.nodes.len() - 1;
        self.output
    }

    fn check(&self, id: NodeId) -> Result<usize> {
        self.dims
            .get(id)
            .copied()
            .ok_or_else(|| Error::Domain(format!("unknown node {id}")))
    }

    pub fn param(&mut self, len: usize) -> NodeId {
        let offset = self.param_count;
        self.param_count += len;
        self.push(Primitive::Param { offset, len }, len)
    }

    pub fn affine(&mut self, input: NodeId, out_dim: usize) -> Result<NodeId> {
        self.dense(input, out_dim, true)
    }

    /// Bias-free `W·h`.
    pub fn linear(&mut self, input: NodeId, out_dim: usize) -> Result<NodeId> {
        self.dense(input, out_dim, false)
    }

    fn dense(&mut self, input: NodeId, out_dim: usize, bias: bool) -> Result<NodeId> {
        let in_dim = self.check(input)?;
        let offset = self.param_count;
        self.param_count += in_dim * out_dim + if bias { out_dim } else { 0 };
        Ok(self.push(
            Primitive::Affine {
                input,
                offset,
                in_dim,
                out_dim,
                bias,
            },
            out_dim,
        ))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation, dropout_site: bool) -> Result<NodeId> {
        let d = self.check(input)?;
        Ok(self.push(
            Primitive::Activation {
                input,
                kind,
                dropout_site,
            },
            d,
        ))
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let d = self.check(input)?;
        Ok(self.push(Primitive::Softmax { input }, d))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (a, b) = (self.check(lhs)?, self.check(rhs)?);
        if a != b {
            return domain(format!("add of mismatched widths {a} and {b}"));
        }
        Ok(self.push(Primitive::Add { lhs, rhs }, a))
    }

    pub fn concat(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let mut d = 0;
        for &p in &parts {
            d += self.check(p)?;
        }
        Ok(self.push(Primitive::Concat { parts }, d))
    }

    /// Marks `id` as the graph output (by default the last node added).
    pub fn set_output(&mut self, id: NodeId) -> Result<()> {
        self.check(id)?;
        self.output = id;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.output]
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn nodes(&self) -> &[Primitive] {
        &self.nodes
    }
}

/// Recorded forward pass: every node value plus any dropout masks.
#[derive(Debug, Clone)]
pub struct Tape<'a> {
    graph: &'a Graph,
    theta: &'a [f64],
    values: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
}

/// Dropout applied at activation nodes flagged as dropout sites.
pub struct Dropout<'r, R: Rng> {
    pub rate: f64,
    pub rng: &'r mut R,
}

pub fn forward<'a>(graph: &'a Graph, theta: &'a [f64], x: &[f64]) -> Result<Tape<'a>> {
    run_forward::<rand_chacha::ChaCha8Rng>(graph, theta, x, None)
}

pub fn forward_with_dropout<'a, R: Rng>(
    graph: &'a Graph,
    theta: &'a [f64],
    x: &[f64],
    dropout: Dropout<'_, R>,
) -> Result<Tape<'a>> {
    run_forward(graph, theta, x, Some(dropout))
}

fn run_forward<'a, R: Rng>(
    graph: &'a Graph,
    theta: &'a [f64],
    x: &[f64],
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<Tape<'a>> {
    if theta.len() != graph.param_count {
        return domain(format!(
            "parameter vector has length {}, model expects {}",
            theta.len(),
            graph.param_count
        ));
    }
    if x.len() != graph.input_dim() {
        return domain(format!(
            "input has length {}, model expects {}",
            x.len(),
            graph.input_dim()
        ));
    }
    let n = graph.nodes.len();
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut masks: Vec<Option<Vec<f64>>> = vec![None; n];
    for (id, node) in graph.nodes.iter().enumerate() {
        let v = match node {
            Primitive::Input => x.to_vec(),
            Primitive::Param { offset, len } => theta[*offset..offset + len].to_vec(),
            Primitive::Affine {
                input,
                offset,
                in_dim,
                out_dim,
                bias,
            } => {
                let h = &values[*input];
                let w = &theta[*offset..offset + in_dim * out_dim];
                let b = &theta[offset + in_dim * out_dim..];
                (0..*out_dim)
                    .map(|o| {
                        let row = &w[o * in_dim..(o + 1) * in_dim];
                        let z: f64 = row.iter().zip(h).map(|(a, c)| a * c).sum();
                        if *bias {
                            z + b[o]
                        } else {
                            z
                        }
                    })
                    .collect()
            }
            Primitive::Activation {
                input,
                kind,
                dropout_site,
            } => {
                let mut v: Vec<f64> = values[*input].iter().map(|&z| kind.apply(z)).collect();
                if let (true, Some(d)) = (*dropout_site, dropout.as_mut()) {
                    if d.rate > 0.0 {
                        let keep = 1.0 / (1.0 - d.rate);
                        let mask: Vec<f64> = (0..v.len())
                            .map(|_| if d.rng.random::<f64>() < d.rate { 0.0 } else { keep })
                            .collect();
                        for (vi, m) in v.iter_mut().zip(&mask) {
                            *vi *= m;
                        }
                        masks[id] = Some(mask);
                    }
                }
                v
            }
            Primitive::Softmax { input } => softmax(&values[*input]),
            Primitive::Add { lhs, rhs } => values[*lhs].iter().zip(&values[*rhs]).map(|(a, b)| a + b).collect(),
            Primitive::Concat { parts } => parts.iter().flat_map(|p| values[*p].iter().copied()).collect(),
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                node: id,
                op: node.name(),
            });
        }
        values.push(v);
    }
    Ok(Tape {
        graph,
        theta,
        values,
        masks,
    })
}

impl<'a> Tape<'a> {
    pub fn output(&self) -> &[f64] {
        &self.values[self.graph.output]
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id]
    }

    pub fn theta(&self) -> &[f64] {
        self.theta
    }

    /// `∇_θ ⟨cotangent, f_θ(x)⟩` at the recorded θ.
    pub fn vjp_params(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.graph.param_count];
        self.vjp_params_into(cotangent, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates `∇_θ ⟨cotangent, f⟩` into `grad`.
    pub fn vjp_params_into(&self, cotangent: &[f64], grad: &mut [f64]) -> Result<()> {
        let g = self.graph;
        if cotangent.len() != g.output_dim() {
            return domain(format!(
                "cotangent has length {}, output has {}",
                cotangent.len(),
                g.output_dim()
            ));
        }
        if grad.len() != g.param_count {
            return domain("gradient buffer length does not match parameter count");
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; g.nodes.len()];
        adj[g.output] = Some(cotangent.to_vec());
        for id in (0..=g.output).rev() {
            let Some(a) = adj[id].take() else { continue };
            match &g.nodes[id] {
                Primitive::Input => {}
                Primitive::Param { offset, .. } => {
                    for (gi, ai) in grad[*offset..].iter_mut().zip(&a) {
                        *gi += ai;
                    }
                }
                Primitive::Affine {
                    input,
                    offset,
                    in_dim,
                    out_dim,
                    bias,
                } => {
                    let h = &self.values[*input];
                    let (in_dim, out_dim, offset) = (*in_dim, *out_dim, *offset);
                    let w = &self.theta[offset..offset + in_dim * out_dim];
                    let mut back = vec![0.0; in_dim];
                    for o in 0..out_dim {
                        let ao = a[o];
                        if ao == 0.0 {
                            continue;
                        }
                        let gw = &mut grad[offset + o * in_dim..offset + (o + 1) * in_dim];
                        for (gwi, hi) in gw.iter_mut().zip(h) {
                            *gwi += ao * hi;
                        }
                        for (bi, wi) in back.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                            *bi += ao * wi;
                        }
                    }
                    if *bias {
                        for (o, ao) in a.iter().enumerate() {
                            grad[offset + in_dim * out_dim + o] += ao;
                        }
                    }
                    accumulate(&mut adj, *input, back);
                }
                Primitive::Activation { input, kind, .. } => {
                    let z = &self.values[*input];
                    let mut back: Vec<f64> = a.iter().zip(z).map(|(ai, zi)| ai * kind.derivative(*zi)).collect();
                    if let Some(mask) = &self.masks[id] {
                        for (b, m) in back.iter_mut().zip(mask) {
                            *b *= m;
                        }
                    }
                    accumulate(&mut adj, *input, back);
                }
                Primitive::Softmax { input } => {
                    let y = &self.values[id];
                    let s: f64 = a.iter().zip(y).map(|(ai, yi)| ai * yi).sum();
                    let back = a.iter().zip(y).map(|(ai, yi)| yi * (ai - s)).collect();
                    accumulate(&mut adj, *input, back);
                }
                Primitive::Add { lhs, rhs } => {
                    accumulate(&mut adj, *lhs, a.clone());
                    accumulate(&mut adj, *rhs, a);
                }
                Primitive::Concat { parts } => {
                    let mut start = 0;
                    for &p in parts {
                        let d = g.dims[p];
                        accumulate(&mut adj, p, a[start..start + d].to_vec());
                        start += d;
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense `|θ| × m_f` Jacobian; column `i` is the VJP with cotangent `eᵢ`.
    pub fn jacobian(&self) -> Result<Tensor> {
        let p = self.graph.param_count;
        let m = self.graph.output_dim();
        let mut jac = Tensor::zeros(&[p, m]);
        let mut e = vec![0.0; m];
        let mut col = vec![0.0; p];
        for i in 0..m {
            e[i] = 1.0;
            col.iter_mut().for_each(|c| *c = 0.0);
            self.vjp_params_into(&e, &mut col)?;
            jac.set_column(i, &col);
            e[i] = 0.0;
        }
        Ok(jac)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, v: Vec<f64>) {
    match &mut adj[id] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(v) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(v),
    }
}

/// Parameter Jacobian at `x`, rejected when it would exceed `budget` bytes.
pub fn jacobian_params_with_budget(graph: &Graph, theta: &[f64], x: &[f64], budget: usize) -> Result<Tensor> {
    let bytes = graph
        .param_count()
        .saturating_mul(graph.output_dim())
        .saturating_mul(std::mem::size_of::<f64>());
    if bytes > budget {
        return domain(format!(
            "dense Jacobian of {} x {} needs {bytes} bytes, budget is {budget}",
            graph.param_count(),
            graph.output_dim()
        ));
    }
    forward(graph, theta, x)?.jacobian()
}

pub fn jacobian_params(graph: &Graph, theta: &[f64], x: &[f64]) -> Result<Tensor> {
    jacobian_params_with_budget(graph, theta, x, DEFAULT_JACOBIAN_BUDGET)
}
