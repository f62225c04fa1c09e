//! Gradient-independence checks, the Z-factor bounds on structural error for
//! ball-sampled Jacobians, and the sliding-window Pearson statistic.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diagnostics::{structural_error, sym_eigenvalues, StructuralWeights};
use crate::error::{domain, Result};
use crate::linalg::{dot, norm2, Tensor};
use crate::rngs;

/// Default `c` in the pass threshold `1 − c/n`.
pub const DEFAULT_PASS_CONSTANT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GicReport {
    pub n_columns: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub fraction_norm_ok: f64,
    pub fraction_inner_ok: f64,
    pub max_abs_inner: f64,
    pub min_norm: f64,
    pub passes: bool,
}

/// `count` points uniform in the `radius`-ball of `ℝ^dim`.
pub fn sample_ball(dim: usize, count: usize, radius: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || count == 0 {
        return domain("ball sampling needs positive dimension and count");
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return domain(format!("ball radius must be positive, got {radius}"));
    }
    let mut rng = rngs::seeded(seed);
    Ok((0..count).map(|_| ball_point(dim, radius, &mut rng)).collect())
}

fn ball_point(dim: usize, radius: f64, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&v);
        if n == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let s = radius * u.powf(1.0 / dim as f64) / n;
        v.iter_mut().for_each(|x| *x *= s);
        return v;
    }
}

/// Fractions of points with `‖x‖ ≥ 1 − 2 ln n/m` and of pairs with
/// `|⟨xᵢ, xⱼ⟩| ≤ √(6 ln n)/√(m − 1)`. Points are expected inside the unit ball.
pub fn concentration_check(points: &[Vec<f64>], pass_constant: f64) -> Result<GicReport> {
    let n = points.len();
    if n == 0 {
        return domain("concentration check needs at least one point");
    }
    let m = points[0].len();
    if points.iter().any(|p| p.len() != m) {
        return domain("points have different dimensions");
    }
    if m < 2 {
        return domain("inner-product bound needs dimension at least 2");
    }
    let ln_n = (n as f64).ln();
    let norm_floor = 1.0 - 2.0 * ln_n / m as f64;
    let inner_cap = (6.0 * ln_n).sqrt() / ((m - 1) as f64).sqrt();
    let norms: Vec<f64> = points.iter().map(|p| norm2(p)).collect();
    let norm_ok = norms.iter().filter(|&&r| r >= norm_floor).count();
    let min_norm = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let pair_stats: Vec<(usize, usize, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut ok, mut total, mut worst) = (0, 0, 0.0f64);
            for j in i + 1..n {
                let ip = dot(&points[i], &points[j]).abs();
                worst = worst.max(ip);
                total += 1;
                if ip <= inner_cap {
                    ok += 1;
                }
            }
            (ok, total, worst)
        })
        .collect();
    let (inner_ok, pairs, max_abs_inner) = pair_stats
        .iter()
        .fold((0, 0, 0.0f64), |(a, b, c), &(o, t, w)| (a + o, b + t, c.max(w)));
    let fraction_norm_ok = norm_ok as f64 / n as f64;
    let fraction_inner_ok = if pairs == 0 {
        1.0
    } else {
        inner_ok as f64 / pairs as f64
    };
    let threshold = 1.0 - pass_constant / n as f64;
    Ok(GicReport {
        n_columns: n,
        dim: m,
        epsilon: 1.0,
        fraction_norm_ok,
        fraction_inner_ok,
        max_abs_inner,
        min_norm,
        passes: fraction_norm_ok >= threshold && fraction_inner_ok >= threshold,
    })
}

/// Concentration check on the columns of `J` (`|θ| × m_f`) scaled by `1/ε`.
/// `ε` defaults to the largest column norm.
pub fn gic_check(j: &Tensor, epsilon: Option<f64>, pass_constant: f64) -> Result<GicReport> {
    let cols: Vec<Vec<f64>> = (0..j.cols()).map(|c| j.column(c)).collect();
    let eps = match epsilon {
        Some(e) if !(e > 0.0) || !e.is_finite() => return domain(format!("epsilon must be positive, got {e}")),
        Some(e) => e,
        None => cols.iter().map(|c| norm2(c)).fold(0.0, f64::max),
    };
    let scaled: Vec<Vec<f64>> = if eps > 0.0 {
        cols.iter().map(|c| c.iter().map(|v| v / eps).collect()).collect()
    } else {
        cols
    };
    let mut report = concentration_check(&scaled, pass_constant)?;
    report.epsilon = eps;
    Ok(report)
}

fn check_dims(theta_count: usize, mf: usize) -> Result<()> {
    if mf < 2 {
        return domain(format!("output dimension must be at least 2, got {mf}"));
    }
    if theta_count < mf + 1 {
        return domain(format!(
            "parameter count {theta_count} must exceed output dimension {mf}"
        ));
    }
    Ok(())
}

/// `Z = 2 m_f √(6 ln m_f) / √(|θ| − 1) · (1 − 2 ln m_f / |θ|)²`.
pub fn z_factor(theta_count: usize, mf: usize) -> Result<f64> {
    check_dims(theta_count, mf)?;
    let (t, m) = (theta_count as f64, mf as f64);
    let shrink = 1.0 - 2.0 * m.ln() / t;
    Ok(2.0 * m * (6.0 * m.ln()).sqrt() / (t - 1.0).sqrt() * shrink * shrink)
}

/// `(U_max, D_max)` with `U_max = −ln (1 − 2 ln m_f/|θ|)² − ln ε²` and
/// `D_max = ln(Z + 1)`.
pub fn predicted_structural_bounds(theta_count: usize, mf: usize, epsilon: f64) -> Result<(f64, f64)> {
    let z = z_factor(theta_count, mf)?;
    if !(epsilon > 0.0) {
        return domain(format!("epsilon must be positive, got {epsilon}"));
    }
    let shrink = 1.0 - 2.0 * (mf as f64).ln() / theta_count as f64;
    let u_max = -2.0 * shrink.ln() - 2.0 * epsilon.ln();
    Ok((u_max, z.ln_1p()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallTrial {
    pub u: f64,
    pub d: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Draws `m_f` Jacobian columns from the `ε`-ball in `ℝ^{|θ|}` and measures
/// the structural error of their Gram matrix.
pub fn ball_trial(theta_count: usize, mf: usize, epsilon: f64, seed: u64) -> Result<BallTrial> {
    let cols = sample_ball(theta_count, mf, epsilon, seed)?;
    let mut a = Tensor::zeros(&[mf, mf]);
    for i in 0..mf {
        for j in 0..=i {
            let v = dot(&cols[i], &cols[j]);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let eig = sym_eigenvalues(&a, None)?;
    let e = structural_error(&eig, StructuralWeights::default(), 0.0)?;
    Ok(BallTrial {
        u: e.u,
        d: e.d,
        lambda_min: eig[0],
        lambda_max: eig[mf - 1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub trials: usize,
    pub u_max: f64,
    pub d_max: f64,
    pub within_u: usize,
    pub within_d: usize,
    pub within_both: usize,
    pub median_u: f64,
    pub median_d: f64,
}

impl ContainmentReport {
    pub fn fraction(&self) -> f64 {
        self.within_both as f64 / self.trials as f64
    }
}

/// Monte-Carlo containment of `(U, D)` in `(U_max, D_max)`; trial `t` uses
/// the seed derived from `(seed, t)`.
pub fn containment(theta_count: usize, mf: usize, epsilon: f64, trials: usize, seed: u64) -> Result<ContainmentReport> {
    let (u_max, d_max) = predicted_structural_bounds(theta_count, mf, epsilon)?;
    if trials == 0 {
        return domain("containment needs at least one trial");
    }
    let runs: Vec<BallTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|t| ball_trial(theta_count, mf, epsilon, rngs::derive_seed(seed, t)))
        .collect::<Result<_>>()?;
    let within_u = runs.iter().filter(|r| r.u <= u_max).count();
    let within_d = runs.iter().filter(|r| r.d <= d_max).count();
    let within_both = runs.iter().filter(|r| r.u <= u_max && r.d <= d_max).count();
    let us: Vec<f64> = runs.iter().map(|r| r.u).collect();
    let ds: Vec<f64> = runs.iter().map(|r| r.d).collect();
    Ok(ContainmentReport {
        trials,
        u_max,
        d_max,
        within_u,
        within_d,
        within_both,
        median_u: median(&us).unwrap_or(f64::NAN),
        median_d: median(&ds).unwrap_or(f64::NAN),
    })
}

/// Windowed correlations; `zero_variance[i]` marks windows forced to 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlidingPearson {
    pub values: Vec<f64>,
    pub zero_variance: Vec<bool>,
}

impl SlidingPearson {
    /// Values of the windows with non-zero variance.
    pub fn unflagged(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.zero_variance)
            .filter(|(_, f)| !**f)
            .map(|(v, _)| *v)
    }
}

/// Pearson correlation over each length-`w` window.
pub fn sliding_pearson(x: &[f64], y: &[f64], w: usize) -> Result<SlidingPearson> {
    if x.len() != y.len() {
        return domain(format!("series lengths differ: {} vs {}", x.len(), y.len()));
    }
    if w < 2 {
        return domain(format!("window must be at least 2, got {w}"));
    }
    if x.len() < w {
        return domain(format!("series of length {} is shorter than the window {w}", x.len()));
    }
    let mut out = SlidingPearson::default();
    for start in 0..=x.len() - w {
        let (r, flag) = pearson(&x[start..start + w], &y[start..start + w]);
        out.values.push(r);
        out.zero_variance.push(flag);
    }
    Ok(out)
}

fn pearson(x: &[f64], y: &[f64]) -> (f64, bool) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let flat = |s: f64, v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        !s.is_finite() || s <= 1e-24 * n * scale * scale
    };
    if flat(sxx, x) || flat(syy, y) {
        return (0.0, true);
    }
    ((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0), false)
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}
