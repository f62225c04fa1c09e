//! Norm power functions `a·‖·‖ʳ`, their Legendre–Fenchel conjugates and the
//! Fenchel-Young losses they generate.
//!
//! For a norm `‖·‖` with dual norm `‖·‖_*`, the conjugate of `a·‖·‖ʳ` is again
//! a norm power, `a*·‖·‖_*^{r*}`, with `1/r + 1/r* = 1` and
//!
//! ```text
//! a* = (1/r*) · (r·a)^{1 - r*}
//! ```
//!
//! The normalized form `Φ̄(μ) = (r·Φ(μ))^{1/r}` is a norm.

use crate::error::{domain, Result};
use crate::linalg::{dot, norm2, norm2_sq};

/// The norm family underlying a [`NormPower`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    L1,
    L2,
    /// `L_p` with `1 < p < ∞`.
    Lp(f64),
    Linf,
}

impl Norm {
    fn validate(self) -> Result<Self> {
        match self {
            Norm::Lp(p) if !(p.is_finite() && p > 1.0) => domain(format!("Lp exponent must lie in (1, inf), got {p}")),
            Norm::Lp(2.0) => Ok(Norm::L2),
            n => Ok(n),
        }
    }

    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => norm2(v),
            Norm::Linf => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
            Norm::Lp(p) => {
                let big = Norm::Linf.eval(v);
                if big == 0.0 {
                    return 0.0;
                }
                let s: f64 = v.iter().map(|x| (x.abs() / big).powf(p)).sum();
                big * s.powf(1.0 / p)
            }
        }
    }

    /// Dual norm: `L1 ↔ L∞`, `L2 ↔ L2`, `Lp ↔ Lq` with `1/p + 1/q = 1`.
    pub fn dual(self) -> Norm {
        match self {
            Norm::L1 => Norm::Linf,
            Norm::Linf => Norm::L1,
            Norm::L2 => Norm::L2,
            Norm::Lp(p) => Norm::Lp(p / (p - 1.0)),
        }
    }
}

/// Conjugate exponent `r* = r / (r - 1)`.
pub fn conjugate_order(r: f64) -> f64 {
    r / (r - 1.0)
}

/// A scaled norm power function `scale · ‖·‖^order`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormPower {
    norm: Norm,
    order: f64,
    scale: f64,
}

impl NormPower {
    pub fn new(norm: Norm, order: f64, scale: f64) -> Result<Self> {
        let norm = norm.validate()?;
        if !(order.is_finite() && order > 1.0) {
            return domain(format!("norm power order must be > 1, got {order}"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return domain(format!("norm power scale must be > 0, got {scale}"));
        }
        Ok(Self { norm, order, scale })
    }

    /// `(scale/2)·‖·‖₂²`, the quadratic used throughout.
    pub fn half_squared_l2(scale: f64) -> Result<Self> {
        Self::new(Norm::L2, 2.0, scale / 2.0)
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn conjugate_order(&self) -> f64 {
        conjugate_order(self.order)
    }

    pub fn eval(&self, mu: &[f64]) -> Result<f64> {
        if mu.iter().any(|x| !x.is_finite()) {
            return domain("norm power evaluated at a non-finite vector");
        }
        Ok(self.eval_unchecked(mu))
    }

    pub(crate) fn eval_unchecked(&self, mu: &[f64]) -> f64 {
        self.scale * self.norm.eval(mu).powf(self.order)
    }

    /// `Φ̄(μ) = (r·Φ(μ))^{1/r}`.
    pub fn normalized(&self, mu: &[f64]) -> Result<f64> {
        let v = self.eval(mu)?;
        Ok((self.order * v).powf(1.0 / self.order))
    }

    /// Legendre–Fenchel conjugate. `L∞` powers are rejected as primal
    /// functions here; they only appear as conjugates of `L1` powers.
    pub fn conjugate(&self) -> Result<NormPower> {
        if self.norm == Norm::Linf {
            return domain("conjugation of an L-infinity norm power is not supported");
        }
        let rs = self.conjugate_order();
        let scale = (1.0 / rs) * (self.order * self.scale).powf(1.0 - rs);
        NormPower::new(self.norm.dual(), rs, scale)
    }

    /// Constants `(lo, hi)` with `lo·‖μ‖₂ ≤ Φ̄(μ) ≤ hi·‖μ‖₂` on `ℝ^m`:
    ///
    /// ```text
    /// lo = m^{-1/2} (Σᵢ Φ̄*(eᵢ)²)^{-1/2},   hi = (Σᵢ Φ̄(eᵢ)²)^{1/2}
    /// ```
    pub fn equivalence_constants(&self, m: usize) -> Result<(f64, f64)> {
        if m == 0 {
            return domain("dimension must be at least 1");
        }
        let conj = self.conjugate()?;
        // every supported norm is permutation invariant, so all ‖eᵢ‖ agree
        let e1 = [1.0];
        let primal = m as f64 * self.normalized(&e1)?.powi(2);
        let dual = m as f64 * conj.normalized(&e1)?.powi(2);
        let lo = (m as f64).powf(-0.5) * dual.powf(-0.5);
        Ok((lo, primal.sqrt()))
    }
}

/// A norm power together with a non-negative relaxation constant `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedBound {
    pub power: NormPower,
    pub relaxation: f64,
}

impl RelaxedBound {
    pub fn new(power: NormPower, relaxation: f64) -> Result<Self> {
        if !(relaxation.is_finite() && relaxation >= 0.0) {
            return domain(format!("relaxation must be >= 0, got {relaxation}"));
        }
        Ok(Self { power, relaxation })
    }

    pub fn exact(power: NormPower) -> Self {
        Self { power, relaxation: 0.0 }
    }
}

/// Fenchel-Young loss `Ω(μ) + Ω*(ν) − ⟨μ, ν⟩`.
pub fn fy_loss(omega: &NormPower, mu: &[f64], nu: &[f64]) -> Result<f64> {
    if mu.len() != nu.len() {
        return domain(format!(
            "Fenchel-Young loss dimension mismatch: {} vs {}",
            mu.len(),
            nu.len()
        ));
    }
    let conj = omega.conjugate()?;
    Ok(omega.eval(mu)? + conj.eval(nu)? - dot(mu, nu))
}

/// Minimizer and minimum of `K(x) = a·xʳ − b·x` over `x > 0`.
pub fn minimize_power_linear(a: f64, b: f64, r: f64) -> Result<(f64, f64)> {
    if !(a > 0.0 && b > 0.0) {
        return domain(format!("coefficients must be positive, got a={a}, b={b}"));
    }
    if !(r > 1.0) {
        return domain(format!("exponent must exceed 1, got {r}"));
    }
    let s = conjugate_order(r);
    let argmin = (b / (r * a)).powf(s - 1.0);
    let min = -(1.0 / s) * b.powf(s) * (r * a).powf(1.0 - s);
    Ok((argmin, min))
}

/// `‖x‖_Ω = r*^{-1/r*} · ‖x‖₂² / Ω̄(x)`; zero at the origin.
pub fn omega_norm(omega: &NormPower, x: &[f64]) -> Result<f64> {
    let sq = norm2_sq(x);
    if sq == 0.0 {
        return Ok(0.0);
    }
    let rs = omega.conjugate_order();
    Ok(rs.powf(-1.0 / rs) * sq / omega.normalized(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    /// Central finite-difference gradient, step 1e-6·(1+‖μ‖).
    fn fd_grad(p: &NormPower, mu: &[f64]) -> Vec<f64> {
        let h = 1e-6 * (1.0 + norm2(mu));
        let mut x = mu.to_vec();
        (0..mu.len())
            .map(|i| {
                let orig = x[i];
                x[i] = orig + h;
                let up = p.eval_unchecked(&x);
                x[i] = orig - h;
                let dn = p.eval_unchecked(&x);
                x[i] = orig;
                (up - dn) / (2.0 * h)
            })
            .collect()
    }

    /// Supremum of `⟨μ,ν⟩ − Φ(μ)` along the maximizing ray, found on a
    /// 10⁴-point radial grid. The ray direction `d` has primal norm one and
    /// attains `⟨d, ν⟩ = ‖ν‖_*`; it is constructed without the dual table.
    fn grid_conjugate(p: &NormPower, nu: &[f64]) -> f64 {
        let dir: Vec<f64> = match p.norm() {
            Norm::L2 => nu.to_vec(),
            Norm::L1 => {
                let (k, _) = nu
                    .iter()
                    .enumerate()
                    .fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
                let mut d = vec![0.0; nu.len()];
                d[k] = nu[k].signum();
                d
            }
            Norm::Lp(pp) => {
                let q = pp / (pp - 1.0);
                nu.iter().map(|v| v.signum() * v.abs().powf(q - 1.0)).collect()
            }
            Norm::Linf => nu.iter().map(|v| v.signum()).collect(),
        };
        let dn = p.norm().eval(&dir);
        let dir: Vec<f64> = dir.iter().map(|v| v / dn).collect();
        let slope = dot(&dir, nu);
        let t_max = 10.0 * (slope / (p.order() * p.scale())).powf(1.0 / (p.order() - 1.0));
        let n = 10_000;
        let mut best = 0.0f64;
        for i in 0..=n {
            let t = t_max * i as f64 / n as f64;
            best = best.max(t * slope - p.scale() * t.powf(p.order()));
        }
        best
    }

    #[test]
    fn eval_examples() {
        let p = NormPower::new(Norm::L2, 2.0, 1.0).unwrap();
        assert!(close(p.eval(&[3.0, 4.0]).unwrap(), 25.0, 1e-15));
        assert_eq!(p.eval(&[0.0, 0.0]).unwrap(), 0.0);
        let q = NormPower::new(Norm::L1, 3.0, 2.0).unwrap();
        assert!(close(q.eval(&[1.0, -1.0]).unwrap(), 16.0, 1e-15));
    }

    #[test]
    fn eval_rejects_non_finite() {
        let p = NormPower::new(Norm::L2, 2.0, 1.0).unwrap();
        assert!(p.eval(&[f64::NAN, 1.0]).is_err());
        assert!(p.eval(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn constructor_rejects_invalid() {
        assert!(NormPower::new(Norm::L2, 1.0, 1.0).is_err());
        assert!(NormPower::new(Norm::L2, 2.0, 0.0).is_err());
        assert!(NormPower::new(Norm::Lp(1.0), 2.0, 1.0).is_err());
        assert_eq!(NormPower::new(Norm::Lp(2.0), 2.0, 1.0).unwrap().norm(), Norm::L2);
    }

    #[test]
    fn normalized_examples() {
        let p = NormPower::new(Norm::L2, 2.0, 0.5).unwrap();
        assert!(close(p.normalized(&[3.0, 4.0]).unwrap(), 5.0, 1e-15));
        assert_eq!(p.normalized(&[0.0, 0.0]).unwrap(), 0.0);
        let q = NormPower::new(Norm::L2, 4.0, 1.0).unwrap();
        // 4^{1/4} = √2
        assert!(close(q.normalized(&[1.0, 0.0]).unwrap(), 2f64.sqrt(), 1e-15));
    }

    #[test]
    fn conjugate_examples() {
        let p = NormPower::new(Norm::L2, 2.0, 1.0).unwrap();
        let c = p.conjugate().unwrap();
        assert_eq!(c.order(), 2.0);
        assert!(close(c.scale(), 0.25, 1e-15));
        assert!(close(c.eval(&[2.0, 0.0]).unwrap(), 1.0, 1e-15));
        assert!(close(grid_conjugate(&p, &[2.0, 0.0]), 1.0, 1e-6));

        let half = NormPower::new(Norm::L2, 2.0, 0.5).unwrap();
        assert_eq!(half.conjugate().unwrap(), half);

        let cubic = NormPower::new(Norm::L2, 3.0, 1.0).unwrap();
        assert!(close(cubic.conjugate().unwrap().order(), 1.5, 1e-15));
    }

    #[test]
    fn dual_norm_table() {
        assert_eq!(Norm::L1.dual(), Norm::Linf);
        assert_eq!(Norm::Linf.dual(), Norm::L1);
        assert_eq!(Norm::L2.dual(), Norm::L2);
        assert_eq!(Norm::Lp(3.0).dual(), Norm::Lp(1.5));
        let p = NormPower::new(Norm::Linf, 2.0, 1.0).unwrap();
        assert!(p.eval(&[1.0, -3.0]).is_ok());
        assert!(p.conjugate().is_err());
    }

    #[test]
    fn fy_loss_examples() {
        let half = NormPower::half_squared_l2(1.0).unwrap();
        assert!(fy_loss(&half, &[1.0, 2.0], &[1.0, 2.0]).unwrap().abs() < 1e-15);
        assert!(close(fy_loss(&half, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0, 1e-15));
        let (mu, nu) = ([0.3, -1.2, 2.0], [1.1, 0.4, -0.5]);
        let want = 0.5 * mu.iter().zip(&nu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        assert!(close(fy_loss(&half, &mu, &nu).unwrap(), want, 1e-14));
        assert!(fy_loss(&half, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn equivalence_constant_examples() {
        let p = NormPower::new(Norm::L2, 2.0, 1.0).unwrap();
        let (lo, hi) = p.equivalence_constants(2).unwrap();
        assert!(close(lo, 2f64.sqrt() / 2.0, 1e-15));
        // Φ̄(eᵢ) = √2 for both basis vectors, so hi = (2 + 2)^{1/2}.
        assert!(close(hi, 2.0, 1e-15));
        let (lo1, hi1) = p.equivalence_constants(1).unwrap();
        // Φ̄(μ) = √2|μ|; Φ̄*(e₁) = 1/√2.
        assert!(close(lo1, 2f64.sqrt(), 1e-15));
        assert!(close(hi1, 2f64.sqrt(), 1e-15));
        assert!(p.equivalence_constants(0).is_err());
    }

    #[test]
    fn equivalence_sandwich_on_random_vectors() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for norm in [Norm::L1, Norm::L2, Norm::Lp(3.0)] {
            let p = NormPower::new(norm, 3.0, 0.7).unwrap();
            let (lo, hi) = p.equivalence_constants(4).unwrap();
            for _ in 0..10_000 {
                let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
                let nb = p.normalized(&mu).unwrap();
                let l2 = norm2(&mu);
                assert!(lo * l2 <= nb * (1.0 + 1e-12));
                assert!(nb <= hi * l2 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn minimize_power_linear_examples() {
        let (x, k) = minimize_power_linear(1.0, 2.0, 2.0).unwrap();
        assert!(close(x, 1.0, 1e-15) && close(k, -1.0, 1e-15));
        let (x, k) = minimize_power_linear(5.0, 10.0, 2.0).unwrap();
        assert!(close(x, 1.0, 1e-15) && close(k, -5.0, 1e-15));
        let (x, k) = minimize_power_linear(1.0, 3.0, 3.0).unwrap();
        assert!(close(x, 1.0, 1e-14) && close(k, -2.0, 1e-14));
        // golden-section oracle on K(x) = x³ − 3x
        let f = |x: f64| x.powi(3) - 3.0 * x;
        let (gx, gk) = golden_min(f, 0.0, 5.0);
        assert!((gx - x).abs() < 1e-7 && (gk - k).abs() < 1e-12);
        assert!(minimize_power_linear(0.0, 1.0, 2.0).is_err());
        assert!(minimize_power_linear(1.0, -1.0, 2.0).is_err());
        assert!(minimize_power_linear(1.0, 1.0, 1.0).is_err());
    }

    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        while b - a > 1e-12 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let x = 0.5 * (a + b);
        (x, f(x))
    }

    #[test]
    fn omega_norm_examples() {
        let half = NormPower::half_squared_l2(1.0).unwrap();
        let v = omega_norm(&half, &[3.0, 4.0]).unwrap();
        assert!(close(v, 5.0 / 2f64.sqrt(), 1e-15));
        assert_eq!(omega_norm(&half, &[0.0, 0.0]).unwrap(), 0.0);
        let l2 = NormPower::half_squared_l2(2.0).unwrap();
        assert!(close(omega_norm(&l2, &[2.0, 0.0]).unwrap(), 1.0, 1e-15));
    }

    fn arb_power() -> impl Strategy<Value = NormPower> {
        let norm = prop_oneof![Just(Norm::L1), Just(Norm::L2), Just(Norm::Lp(1.5)), Just(Norm::Lp(3.0)),];
        (norm, 1.2f64..5.0, 0.1f64..4.0).prop_map(|(n, r, a)| NormPower::new(n, r, a).unwrap())
    }

    fn arb_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, 1..6)
    }

    proptest! {
        #[test]
        fn homogeneity(p in arb_power(), mu in arb_vec(), k in -4.0f64..4.0) {
            let scaled: Vec<f64> = mu.iter().map(|x| k * x).collect();
            let lhs = p.eval(&scaled).unwrap();
            let rhs = k.abs().powf(p.order()) * p.eval(&mu).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn euler_and_conjugate_duality(p in arb_power(), mu in prop::collection::vec(0.05f64..3.0, 1..6), signs in prop::collection::vec(any::<bool>(), 6)) {
            let mu: Vec<f64> = mu.iter().zip(&signs).map(|(x, s)| if *s { *x } else { -x }).collect();
            let g = fd_grad(&p, &mu);
            let phi = p.eval(&mu).unwrap();
            let euler = dot(&mu, &g);
            let conj = p.conjugate().unwrap();
            let dual = conj.order() * conj.eval(&g).unwrap();
            let target = p.order() * phi;
            prop_assert!((euler - target).abs() <= 1e-5 * target.abs().max(1e-12));
            prop_assert!((dual - target).abs() <= 1e-5 * target.abs().max(1e-12));
            // Fenchel-Young loss vanishes at the gradient.
            prop_assert!(fy_loss(&p, &mu, &g).unwrap().abs() <= 1e-9 * (1.0 + phi));
        }

        #[test]
        fn normalized_triangle(p in arb_power(), pair in (1usize..6).prop_flat_map(|n| (prop::collection::vec(-3.0f64..3.0, n), prop::collection::vec(-3.0f64..3.0, n)))) {
            let (mu, nu) = pair;
            let sum: Vec<f64> = mu.iter().zip(&nu).map(|(a, b)| a + b).collect();
            let lhs = p.normalized(&sum).unwrap();
            prop_assert!(lhs <= p.normalized(&mu).unwrap() + p.normalized(&nu).unwrap() + 1e-12);
        }

        #[test]
        fn generalized_cauchy_schwarz_and_fy_nonnegative(p in arb_power(), pair in (1usize..6).prop_flat_map(|n| (prop::collection::vec(-3.0f64..3.0, n), prop::collection::vec(-3.0f64..3.0, n)))) {
            let (mu, nu) = pair;
            let conj = p.conjugate().unwrap();
            let prod = p.normalized(&mu).unwrap() * conj.normalized(&nu).unwrap();
            prop_assert!(prod - dot(&mu, &nu).abs() >= -1e-12 * (1.0 + prod));
            prop_assert!(fy_loss(&p, &mu, &nu).unwrap() >= -1e-12 * (1.0 + prod));
        }

        #[test]
        fn conjugate_matches_grid_oracle(p in arb_power(), nu in prop::collection::vec(-3.0f64..3.0, 1..5)) {
            prop_assume!(norm2(&nu) > 1e-3);
            let want = grid_conjugate(&p, &nu);
            let got = p.conjugate().unwrap().eval(&nu).unwrap();
            prop_assert!((got - want).abs() <= 1e-4 * got.abs().max(1e-300), "got {got} want {want}");
        }
    }
}
