//! Mini-batch SGD, the generalized-smoothness optimal step and the
//! gradient-correlation estimator.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::diagnostics::Sample;
use crate::error::{domain, Error, Result};
use crate::linalg::norm2_sq;
use crate::loss::{self, LossKind};
use crate::model::ParamModel;
use crate::normpower::{omega_norm, NormPower};
use crate::rngs;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub theta: Vec<f64>,
    pub velocity: Vec<f64>,
    pub lr: f64,
    pub momentum: f64,
    pub step: u64,
}

impl SgdState {
    pub fn new(theta: Vec<f64>, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return domain(format!("learning rate must be positive, got {lr}"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return domain(format!("momentum must lie in [0, 1), got {momentum}"));
        }
        let velocity = vec![0.0; theta.len()];
        Ok(Self {
            theta,
            velocity,
            lr,
            momentum,
            step: 0,
        })
    }
}

/// `v ← μ v + g`, `θ ← θ − lr·v`.
pub fn sgd_step(state: &mut SgdState, grad: &[f64]) -> Result<()> {
    step_with_lr(state, grad, state.lr)
}

fn step_with_lr(state: &mut SgdState, grad: &[f64], lr: f64) -> Result<()> {
    if grad.len() != state.theta.len() {
        return domain(format!(
            "gradient has length {}, parameters have {}",
            grad.len(),
            state.theta.len()
        ));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at step {}", state.step)));
    }
    for ((t, v), g) in state.theta.iter_mut().zip(&mut state.velocity).zip(grad) {
        *v = state.momentum * *v + g;
        *t -= lr * *v;
    }
    state.step += 1;
    Ok(())
}

/// `H(Ω, c_Ω)`-smoothness of the risk in θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaSpec {
    pub power: NormPower,
    pub relaxation: f64,
}

impl OmegaSpec {
    pub fn new(power: NormPower, relaxation: f64) -> Result<Self> {
        if !(relaxation >= 0.0) || !relaxation.is_finite() {
            return domain(format!("relaxation must be finite and non-negative, got {relaxation}"));
        }
        Ok(Self { power, relaxation })
    }

    /// `(L/2)‖·‖₂²`, exact.
    pub fn lipschitz(l: f64) -> Result<Self> {
        Self::new(NormPower::half_squared_l2(l)?, 0.0)
    }
}

/// `α = (‖g‖²/(r_Ω Ω(g)))^{r_Ω*−1}` and the guaranteed decrease
/// `‖g‖_Ω^{r_Ω*} − c_Ω`. A zero gradient gives `(0, −c_Ω)`.
pub fn optimal_step(omega: &OmegaSpec, grad: &[f64]) -> Result<(f64, f64)> {
    let g2 = norm2_sq(grad);
    if !g2.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    if g2 == 0.0 {
        return Ok((0.0, -omega.relaxation));
    }
    let r = omega.power.order();
    let rs = omega.power.conjugate_order();
    let alpha = (g2 / (r * omega.power.eval(grad)?)).powf(rs - 1.0);
    let decrease = omega_norm(&omega.power, grad)?.powf(rs) - omega.relaxation;
    Ok((alpha, decrease))
}

/// SGD step with the optimal learning rate; momentum is ignored.
/// Returns the `(α, predicted decrease)` pair used.
pub fn optimal_sgd_step(state: &mut SgdState, omega: &OmegaSpec, grad: &[f64]) -> Result<(f64, f64)> {
    let (alpha, dec) = optimal_step(omega, grad)?;
    state.velocity.iter_mut().for_each(|v| *v = 0.0);
    let saved = state.momentum;
    state.momentum = 0.0;
    let out = step_with_lr(state, grad, alpha);
    state.momentum = saved;
    out.map(|_| (alpha, dec))
}

/// `⌈n·gap / (m·ε^{r_Ω*})⌉`.
pub fn steps_to_epsilon(epsilon: f64, omega: &OmegaSpec, n: usize, m: usize, initial_gap: f64) -> Result<u64> {
    if !(epsilon > 0.0) {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    if m == 0 || m > n {
        return domain(format!("batch size {m} must lie in 1..={n}"));
    }
    if !(initial_gap >= 0.0) || !initial_gap.is_finite() {
        return domain(format!(
            "initial gap must be finite and non-negative, got {initial_gap}"
        ));
    }
    let t = n as f64 * initial_gap / (m as f64 * epsilon.powf(omega.power.conjugate_order()));
    // guard against 100.00000000000001 style round-off
    let r = t.round();
    Ok(if (t - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        t.ceil()
    } as u64)
}

/// Mean loss over the given samples.
pub fn mean_loss(kind: LossKind, model: &ParamModel, theta: &[f64], samples: &[Sample<'_>]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|(x, y)| loss::loss_eval(kind, &model.predict(theta, x)?, y))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean loss and its θ-gradient over a batch. Per-sample gradients are
/// computed concurrently and summed in batch order.
pub fn batch_loss_grad(
    kind: LossKind,
    model: &ParamModel,
    theta: &[f64],
    batch: &[Sample<'_>],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return domain("empty batch");
    }
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|(x, y)| {
            let tape = model.forward(theta, x)?;
            let l = loss::loss_eval(kind, tape.output(), y)?;
            let e = loss::loss_grad_output(kind, tape.output(), y)?;
            Ok((l, tape.vjp_params(&e)?))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut total = 0.0;
    for (l, g) in &parts {
        total += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, grad))
}

/// `𝓛(θ_after, s∖s_k) − 𝓛(θ_before, s∖s_k)`; zero when the complement is empty.
pub fn estimate_m(
    kind: LossKind,
    model: &ParamModel,
    theta_before: &[f64],
    theta_after: &[f64],
    full_set: &[Sample<'_>],
    batch: &[usize],
) -> Result<f64> {
    let mut in_batch = vec![false; full_set.len()];
    for &i in batch {
        if i >= full_set.len() {
            return domain(format!("batch index {i} outside a set of {}", full_set.len()));
        }
        in_batch[i] = true;
    }
    let complement: Vec<Sample> = full_set
        .iter()
        .zip(&in_batch)
        .filter(|(_, b)| !**b)
        .map(|(s, _)| *s)
        .collect();
    if complement.is_empty() || theta_before == theta_after {
        return Ok(0.0);
    }
    Ok(mean_loss(kind, model, theta_after, &complement)? - mean_loss(kind, model, theta_before, &complement)?)
}

/// Uniform batches without replacement; each epoch is a fresh permutation
/// seeded from the run seed and the epoch index. A trailing partial batch is
/// dropped.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return domain(format!("batch size {batch_size} must lie in 1..={n}"));
        }
        let mut s = Self {
            n,
            batch_size,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.n).collect();
        let mut rng = rngs::seeded(rngs::derive_seed(self.seed, self.epoch));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos + self.batch_size > self.n {
            self.epoch += 1;
            self.shuffle();
        }
        let start = self.pos;
        self.pos += self.batch_size;
        &self.order[start..self.pos]
    }
}
