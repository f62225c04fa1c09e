//! Structural-matrix spectra and the empirical-risk sandwich.
//!
//! For a sample `x` the structural matrix is `A_x = Jᵀ J` with
//! `J = ∇_θ f_θ(x)` (`|θ| × m_f`). With `e = ∇_f ℓ` we have
//! `∇_θ ℓ = J e`, so `‖∇_θ ℓ‖² = eᵀ A_x e` is squeezed between
//! `λ_min‖e‖²` and `λ_max‖e‖²`; combined with the output-space bounds of the
//! loss profile this brackets `ℓ − ℓ*`:
//!
//! ```text
//! C_Φ ‖∇_θℓ‖^{r*} / λ_max^{r*/2} − c_Φ  ≤  ℓ − ℓ*  ≤  C_φ ‖∇_θℓ‖^{r*} / λ_min^{r*/2} + c_φ
//! ```
//!
//! where `r* = r_{Φ*}`. Structural errors use `U = −log λ_min`,
//! `L = −log λ_max`, `D = U − L`, `S = αD + βU + γL`.

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::linalg::{norm2, Tensor};
use crate::loss::{self, LossKind, ProfileContext, SmoothnessProfile};
use crate::model::ParamModel;

/// Sweep cap for the cyclic Jacobi eigensolver.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// `A_x = ∇_θ f_θ(x)ᵀ ∇_θ f_θ(x)`.
pub fn structural_matrix(model: &ParamModel, theta: &[f64], x: &[f64]) -> Result<Tensor> {
    Ok(model.jacobian(theta, x)?.gram())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Iterates until the off-diagonal Frobenius norm is at most `tol`; `None`
/// selects `1e-10·‖A‖_F`.
pub fn sym_eigenvalues(a: &Tensor, tol: Option<f64>) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.shape().len() != 2 || a.cols() != n {
        return domain(format!("eigenvalues need a square matrix, got {:?}", a.shape()));
    }
    if !a.is_finite() {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let scale = a.frobenius();
    for i in 0..n {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-9 * scale.max(1.0) {
                return domain(format!("matrix is not symmetric at ({i}, {j})"));
            }
        }
    }
    let tol = tol.unwrap_or(1e-10 * scale);
    let mut m: Vec<f64> = a.data().to_vec();
    let off = |m: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&m) > tol {
        if sweeps == MAX_JACOBI_SWEEPS {
            return Err(Error::Numeric(format!(
                "Jacobi eigensolver did not converge in {MAX_JACOBI_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    m[k * n + p] = new_kp;
                    m[p * n + k] = new_kp;
                    m[k * n + q] = new_kq;
                    m[q * n + k] = new_kq;
                }
                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: f64,
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, x: f64, slack: f64) -> bool {
        (x - self.center).abs() <= self.radius + slack
    }
}

/// One Gershgorin disc per row: centre `aᵢᵢ`, radius `Σ_{j≠i} |aᵢⱼ|`.
pub fn gershgorin_bounds(a: &Tensor) -> Result<Vec<Disc>> {
    let n = a.rows();
    if a.cols() != n {
        return domain("Gershgorin discs need a square matrix");
    }
    Ok((0..n)
        .map(|i| Disc {
            center: a.get(i, i),
            radius: (0..n).filter(|&j| j != i).map(|j| a.get(i, j).abs()).sum(),
        })
        .collect())
}

/// Weights `(α, β, γ)` of `S = αD + βU + γL`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for StructuralWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralError {
    pub u: f64,
    pub l: f64,
    pub d: f64,
    pub s: f64,
    pub degenerate: bool,
}

/// `1e-12 · max(λ_max, 1)`.
pub fn default_floor(lambda_max: f64) -> f64 {
    1e-12 * lambda_max.max(1.0)
}

/// Structural error from the extreme eigenvalues, natural log.
pub fn structural_error(eigs: &[f64], weights: StructuralWeights, floor: f64) -> Result<StructuralError> {
    structural_error_in_base(eigs, weights, floor, std::f64::consts::E)
}

pub fn structural_error_in_base(
    eigs: &[f64],
    weights: StructuralWeights,
    floor: f64,
    base: f64,
) -> Result<StructuralError> {
    let (Some(&lo), Some(&hi)) = (
        eigs.iter().min_by(|a, b| a.total_cmp(b)),
        eigs.iter().max_by(|a, b| a.total_cmp(b)),
    ) else {
        return domain("structural error needs at least one eigenvalue");
    };
    Ok(from_extremes(lo, hi, weights, floor, base))
}

fn from_extremes(lo: f64, hi: f64, w: StructuralWeights, floor: f64, base: f64) -> StructuralError {
    let ln_base = base.ln();
    let u = -lo.max(floor).ln() / ln_base;
    let l = -hi.max(floor).ln() / ln_base;
    let d = u - l;
    StructuralError {
        u,
        l,
        d,
        s: w.alpha * d + w.beta * u + w.gamma * l,
        degenerate: lo < floor,
    }
}

/// Settings shared by every diagnostic pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticSettings {
    pub weights: StructuralWeights,
    /// Fixed eigenvalue floor; `None` uses [`default_floor`].
    pub floor: Option<f64>,
    pub log_base: f64,
    pub profile: ProfileContext,
}

impl Default for DiagnosticSettings {
    fn default() -> Self {
        Self {
            weights: StructuralWeights::default(),
            floor: None,
            log_base: std::f64::consts::E,
            profile: ProfileContext::default(),
        }
    }
}

impl DiagnosticSettings {
    fn floor_for(&self, lambda_max: f64) -> f64 {
        self.floor.unwrap_or_else(|| default_floor(lambda_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStructure {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub error: StructuralError,
}

/// Everything measured on one sample that does not depend on the profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleProbe {
    pub output: Vec<f64>,
    pub loss: f64,
    pub grad_output: Vec<f64>,
    pub grad_theta_norm: f64,
    pub eigenvalues: Vec<f64>,
}

impl SampleProbe {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// One forward pass, one VJP for `∇_θ ℓ`, and `m_f` VJPs for the spectrum.
pub fn probe_sample(kind: LossKind, model: &ParamModel, theta: &[f64], x: &[f64], y: &[f64]) -> Result<SampleProbe> {
    let tape = model.forward(theta, x)?;
    let output = tape.output().to_vec();
    let loss = loss::loss_eval(kind, &output, y)?;
    let grad_output = loss::loss_grad_output(kind, &output, y)?;
    let grad_theta = tape.vjp_params(&grad_output)?;
    let a = tape.jacobian()?.gram();
    let eigenvalues = sym_eigenvalues(&a, None)?;
    Ok(SampleProbe {
        output,
        loss,
        grad_output,
        grad_theta_norm: norm2(&grad_theta),
        eigenvalues,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c_big_phi: f64,
    pub c_small_phi: f64,
    /// `r_{Φ*}`
    pub r_conj: f64,
}

/// `C_Φ = (1/r*) m_f^{−r*/2} (Σ Φ̄(eᵢ)²)^{−r*/2}`,
/// `C_φ = (1/r*) (Σ φ̄*(eᵢ)²)^{r*/2}`, with `r* = r_{Φ*}`.
pub fn bound_constants(profile: &SmoothnessProfile, m_f: usize) -> Result<BoundConstants> {
    if m_f == 0 {
        return domain("output dimension must be positive");
    }
    let big_phi = profile.smooth_part.power;
    let small_conj = profile.convex_part.power.conjugate()?;
    let r = big_phi.conjugate_order();
    let mut e = vec![0.0; m_f];
    let (mut sum_big, mut sum_small) = (0.0, 0.0);
    for i in 0..m_f {
        e[i] = 1.0;
        sum_big += big_phi.normalized(&e)?.powi(2);
        sum_small += small_conj.normalized(&e)?.powi(2);
        e[i] = 0.0;
    }
    Ok(BoundConstants {
        c_big_phi: (1.0 / r) * (m_f as f64).powf(-r / 2.0) * sum_big.powf(-r / 2.0),
        c_small_phi: (1.0 / r) * sum_small.powf(r / 2.0),
        r_conj: r,
    })
}

/// `(lower, upper)` from a gradient-power term and the extreme eigenvalues.
/// A degenerate `λ_min` yields an infinite upper bound.
fn sandwich(
    profile: &SmoothnessProfile,
    c: &BoundConstants,
    grad_pow: f64,
    lambda_min: f64,
    lambda_max: f64,
    degenerate: bool,
) -> (f64, f64) {
    let half = c.r_conj / 2.0;
    let lower_term = if grad_pow == 0.0 || lambda_max <= 0.0 {
        0.0
    } else {
        c.c_big_phi * grad_pow / lambda_max.powf(half)
    };
    let upper = if degenerate {
        f64::INFINITY
    } else if grad_pow == 0.0 {
        profile.convex_part.relaxation
    } else {
        c.c_small_phi * grad_pow / lambda_min.powf(half) + profile.convex_part.relaxation
    };
    (lower_term - profile.smooth_part.relaxation, upper)
}

/// Per-sample diagnostics together with the individual-sample bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport {
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub error: StructuralError,
    pub loss: f64,
    /// `ℓ − ℓ*`
    pub excess_loss: f64,
    /// `‖∇_θ ℓ‖₂^{r*}`
    pub local_grad_norm_r: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

impl StructuralReport {
    pub fn degenerate(&self) -> bool {
        self.error.degenerate
    }

    /// `lower ≤ ℓ − ℓ* ≤ upper` with absolute slack.
    pub fn brackets(&self, slack: f64) -> bool {
        self.lower_bound <= self.excess_loss + slack && self.excess_loss <= self.upper_bound + slack
    }
}

fn report_from_probe(
    probe: &SampleProbe,
    profile: &SmoothnessProfile,
    c: &BoundConstants,
    settings: &DiagnosticSettings,
) -> StructuralReport {
    let (lo, hi) = (probe.lambda_min(), probe.lambda_max());
    let error = from_extremes(lo, hi, settings.weights, settings.floor_for(hi), settings.log_base);
    let grad_pow = probe.grad_theta_norm.powf(c.r_conj);
    let (lower_bound, upper_bound) = sandwich(profile, c, grad_pow, lo, hi, error.degenerate);
    StructuralReport {
        eigenvalues: probe.eigenvalues.clone(),
        lambda_min: lo,
        lambda_max: hi,
        error,
        loss: probe.loss,
        excess_loss: probe.loss - profile.optimum(),
        local_grad_norm_r: grad_pow,
        lower_bound,
        upper_bound,
    }
}

/// Resolves the profile, filling in `q_min` from `outputs` when the loss needs
/// it and the settings do not pin it.
pub fn resolve_profile<'a>(
    kind: LossKind,
    settings: &DiagnosticSettings,
    outputs: impl IntoIterator<Item = &'a [f64]>,
) -> Result<SmoothnessProfile> {
    let mut ctx = settings.profile;
    if kind == LossKind::SoftmaxCe && ctx.q_min.is_none() {
        ctx.q_min = Some(loss::softmax_min(outputs));
    }
    loss::profile(kind, &ctx)
}

/// Individual-sample bound for `z = (x, y)`.
pub fn loss_bounds(
    kind: LossKind,
    model: &ParamModel,
    theta: &[f64],
    x: &[f64],
    y: &[f64],
    settings: &DiagnosticSettings,
) -> Result<StructuralReport> {
    let probe = probe_sample(kind, model, theta, x, y)?;
    let profile = resolve_profile(kind, settings, [probe.output.as_slice()])?;
    let c = bound_constants(&profile, model.output_dim())?;
    Ok(report_from_probe(&probe, &profile, &c, settings))
}

/// Diagnostic pass over a batch: per-sample reports plus the dataset-wide
/// bound built from `λ_min(A_s) = min λ_min(A_x)` and `λ_max(A_s) = max λ_max(A_x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub samples: Vec<StructuralReport>,
    pub profile: SmoothnessProfile,
    pub constants: BoundConstants,
    pub aggregate: AggregateStructure,
    /// Mean loss over the batch.
    pub loss: f64,
    /// Mean `ℓ − ℓ*` over the batch.
    pub excess_loss: f64,
    /// `(1/n) Σ ‖∇_θ ℓ‖^{r*}`
    pub local_grad_norm: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Smallest softmax component over the batch outputs.
    pub q_min: f64,
    /// Mean `‖softmax(f) − y‖₂²`.
    pub output_sq_error: f64,
}

impl DatasetReport {
    pub fn degenerate(&self) -> bool {
        self.aggregate.error.degenerate
    }

    pub fn brackets(&self, slack: f64) -> bool {
        self.lower_bound <= self.excess_loss + slack && self.excess_loss <= self.upper_bound + slack
    }
}

pub type Sample<'a> = (&'a [f64], &'a [f64]);

pub fn probe_samples(
    kind: LossKind,
    model: &ParamModel,
    theta: &[f64],
    samples: &[Sample<'_>],
) -> Result<Vec<SampleProbe>> {
    samples
        .par_iter()
        .map(|(x, y)| probe_sample(kind, model, theta, x, y))
        .collect()
}

pub fn aggregate_structure(probes: &[SampleProbe], settings: &DiagnosticSettings) -> Result<AggregateStructure> {
    if probes.is_empty() {
        return domain("aggregate structure needs at least one sample");
    }
    let lambda_min = probes.iter().map(SampleProbe::lambda_min).fold(f64::INFINITY, f64::min);
    let lambda_max = probes
        .iter()
        .map(SampleProbe::lambda_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let error = from_extremes(
        lambda_min,
        lambda_max,
        settings.weights,
        settings.floor_for(lambda_max),
        settings.log_base,
    );
    Ok(AggregateStructure {
        lambda_min,
        lambda_max,
        error,
    })
}

pub fn dataset_structural(
    model: &ParamModel,
    theta: &[f64],
    inputs: &[&[f64]],
    settings: &DiagnosticSettings,
) -> Result<AggregateStructure> {
    let probes: Vec<SampleProbe> = inputs
        .par_iter()
        .map(|x| {
            let a = structural_matrix(model, theta, x)?;
            Ok(SampleProbe {
                output: Vec::new(),
                loss: 0.0,
                grad_output: Vec::new(),
                grad_theta_norm: 0.0,
                eigenvalues: sym_eigenvalues(&a, None)?,
            })
        })
        .collect::<Result<_>>()?;
    aggregate_structure(&probes, settings)
}

pub fn dataset_bounds(
    kind: LossKind,
    model: &ParamModel,
    theta: &[f64],
    samples: &[Sample<'_>],
    settings: &DiagnosticSettings,
) -> Result<DatasetReport> {
    let probes = probe_samples(kind, model, theta, samples)?;
    dataset_report(kind, model.output_dim(), &probes, samples, settings)
}

/// Assembles a [`DatasetReport`] from precomputed probes.
pub fn dataset_report(
    kind: LossKind,
    m_f: usize,
    probes: &[SampleProbe],
    samples: &[Sample<'_>],
    settings: &DiagnosticSettings,
) -> Result<DatasetReport> {
    let aggregate = aggregate_structure(probes, settings)?;
    let q_min = loss::softmax_min(probes.iter().map(|p| p.output.as_slice()));
    let profile = resolve_profile(kind, settings, probes.iter().map(|p| p.output.as_slice()))?;
    let constants = bound_constants(&profile, m_f)?;
    let reports: Vec<StructuralReport> = probes
        .iter()
        .map(|p| report_from_probe(p, &profile, &constants, settings))
        .collect();
    let n = probes.len() as f64;
    let loss = probes.iter().map(|p| p.loss).sum::<f64>() / n;
    let local_grad_norm = reports.iter().map(|r| r.local_grad_norm_r).sum::<f64>() / n;
    let (lower_bound, upper_bound) = sandwich(
        &profile,
        &constants,
        local_grad_norm,
        aggregate.lambda_min,
        aggregate.lambda_max,
        aggregate.error.degenerate,
    );
    let output_sq_error = probes
        .iter()
        .zip(samples)
        .map(|(p, (_, y))| {
            crate::autodiff::softmax(&p.output)
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(DatasetReport {
        samples: reports,
        profile,
        constants,
        aggregate,
        loss,
        excess_loss: loss - profile.optimum(),
        local_grad_norm,
        lower_bound,
        upper_bound,
        q_min,
        output_sq_error,
    })
}

/// `(1/n) Σ ‖∇_θ ℓ(f_θ(xᵢ), yᵢ)‖₂^r`.
pub fn local_grad_norm(
    kind: LossKind,
    model: &ParamModel,
    theta: &[f64],
    samples: &[Sample<'_>],
    r: f64,
) -> Result<f64> {
    if !(r > 1.0) {
        return domain(format!("local gradient norm exponent must exceed 1, got {r}"));
    }
    if samples.is_empty() {
        return domain("local gradient norm needs at least one sample");
    }
    let norms: Vec<f64> = samples
        .par_iter()
        .map(|(x, y)| {
            let tape = model.forward(theta, x)?;
            let e = loss::loss_grad_output(kind, tape.output(), y)?;
            Ok(norm2(&tape.vjp_params(&e)?))
        })
        .collect::<Result<_>>()?;
    Ok(norms.iter().map(|g| g.powf(r)).sum::<f64>() / samples.len() as f64)
}

/// `(Φ*(∇_f ℓ) − c_Φ, φ*(∇_f ℓ) + c_φ)`.
pub fn output_space_bounds(profile: &SmoothnessProfile, grad_f: &[f64]) -> Result<(f64, f64)> {
    let lo = profile.smooth_part.power.conjugate()?.eval(grad_f)? - profile.smooth_part.relaxation;
    let hi = profile.convex_part.power.conjugate()?.eval(grad_f)? + profile.convex_part.relaxation;
    Ok((lo, hi))
}
