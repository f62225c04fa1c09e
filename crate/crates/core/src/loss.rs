//! Losses on model outputs, their output gradients, and the smoothness
//! profiles `(φ, c_φ, Φ, c_Φ, ℓ*)` consumed by the bound machinery.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::softmax;
use crate::error::{domain, Error, Result};
use crate::normpower::{Norm, NormPower, RelaxedBound};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `½‖f − y‖₂²`
    Mse,
    /// `−Σ yᵢ ln softmax(f)ᵢ`
    SoftmaxCe,
    /// `‖f − y‖₁`
    L1,
    /// Huber-style: `½d²/β` inside `|d| < β`, `|d| − β/2` outside, summed.
    SmoothL1 { beta: f64 },
    /// `‖f − y‖ₖᵏ`, `k ∈ 1..=6`.
    PnormPow { k: u32 },
}

impl LossKind {
    pub fn pnorm_pow(k: u32) -> Result<Self> {
        if !(1..=6).contains(&k) {
            return domain(format!("pnorm_pow exponent must be in 1..=6, got {k}"));
        }
        Ok(LossKind::PnormPow { k })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::SmoothL1 { beta } if !(beta.is_finite() && beta > 0.0) => {
                domain(format!("smooth_l1 beta must be positive, got {beta}"))
            }
            LossKind::PnormPow { k } if !(1..=6).contains(&k) => {
                domain(format!("pnorm_pow exponent must be in 1..=6, got {k}"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the registry supplies analytic `(φ, Φ)` constants.
    pub fn has_analytic_profile(&self) -> bool {
        matches!(self, LossKind::Mse | LossKind::SoftmaxCe | LossKind::PnormPow { k: 2 })
    }

    /// Default norm power `(norm, order)` for the empirical recipe.
    fn empirical_shape(&self) -> (Norm, f64) {
        match *self {
            LossKind::PnormPow { k } if k >= 2 => (Norm::Lp(k as f64), k as f64),
            LossKind::L1 | LossKind::PnormPow { .. } => (Norm::L1, 2.0),
            _ => (Norm::L2, 2.0),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Mse => write!(f, "mse"),
            LossKind::SoftmaxCe => write!(f, "softmax_ce"),
            LossKind::L1 => write!(f, "l1"),
            LossKind::SmoothL1 { beta } => write!(f, "smooth_l1({beta})"),
            LossKind::PnormPow { k } => write!(f, "pnorm_pow({k})"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    /// Accepts `mse`, `softmax_ce`, `l1`, `smooth_l1`, `smooth_l1(β)`,
    /// `pnorm_pow(k)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let arg = |name: &str| {
            s.strip_prefix(name)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
                .map(str::trim)
        };
        let kind = match s {
            "mse" => LossKind::Mse,
            "softmax_ce" => LossKind::SoftmaxCe,
            "l1" => LossKind::L1,
            "smooth_l1" => LossKind::SmoothL1 { beta: 1.0 },
            _ => {
                if let Some(b) = arg("smooth_l1") {
                    let beta = b
                        .parse()
                        .map_err(|_| Error::Config(format!("bad smooth_l1 beta '{b}'")))?;
                    LossKind::SmoothL1 { beta }
                } else if let Some(k) = arg("pnorm_pow") {
                    let k = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad pnorm_pow exponent '{k}'")))?;
                    LossKind::PnormPow { k }
                } else {
                    return Err(Error::Config(format!("unknown loss kind '{s}'")));
                }
            }
        };
        kind.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(kind)
    }
}

fn check_dims(f: &[f64], y: &[f64]) -> Result<()> {
    if f.len() != y.len() {
        return domain(format!("output has length {}, target has {}", f.len(), y.len()));
    }
    Ok(())
}

fn check_distribution(y: &[f64]) -> Result<()> {
    let sum: f64 = y.iter().sum();
    if y.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return domain("softmax_ce target must be a probability vector");
    }
    Ok(())
}

fn log_sum_exp(f: &[f64]) -> f64 {
    let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + f.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn loss_eval(kind: LossKind, f: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(f, y)?;
    let diff = f.iter().zip(y).map(|(a, b)| a - b);
    Ok(match kind {
        LossKind::Mse => 0.5 * diff.map(|d| d * d).sum::<f64>(),
        LossKind::SoftmaxCe => {
            check_distribution(y)?;
            let lse = log_sum_exp(f);
            let ce: f64 = f
                .iter()
                .zip(y)
                .filter(|(_, &t)| t > 0.0)
                .map(|(fi, t)| t * (lse - fi))
                .sum();
            ce.max(0.0)
        }
        LossKind::L1 => diff.map(f64::abs).sum(),
        LossKind::SmoothL1 { beta } => diff
            .map(|d| {
                let a = d.abs();
                if a < beta {
                    0.5 * a * a / beta
                } else {
                    a - 0.5 * beta
                }
            })
            .sum(),
        LossKind::PnormPow { k } => diff.map(|d| d.abs().powi(k as i32)).sum(),
    })
}

/// `∇_f ℓ(f, y)`. Non-smooth points use `sign(0) = 0`.
pub fn loss_grad_output(kind: LossKind, f: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dims(f, y)?;
    let sign = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let diff = f.iter().zip(y).map(|(a, b)| a - b);
    Ok(match kind {
        LossKind::Mse => diff.collect(),
        LossKind::SoftmaxCe => {
            check_distribution(y)?;
            softmax(f).iter().zip(y).map(|(p, t)| p - t).collect()
        }
        LossKind::L1 => diff.map(sign).collect(),
        LossKind::SmoothL1 { beta } => diff.map(|d| if d.abs() < beta { d / beta } else { sign(d) }).collect(),
        LossKind::PnormPow { k } => diff.map(|d| k as f64 * d.abs().powi(k as i32 - 1) * sign(d)).collect(),
    })
}

/// `(a, r, c)` for an empirically fitted bound `a‖·‖ₚʳ + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalTriple {
    pub scale: f64,
    pub order: f64,
    pub relaxation: f64,
}

/// Everything `profile` needs beyond the loss kind.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProfileContext {
    /// Smallest softmax component seen over the diagnostic batch.
    pub q_min: Option<f64>,
    /// Overrides for the convex (φ) part of an empirical profile.
    pub convex: Option<EmpiricalTriple>,
    /// Overrides for the smooth (Φ) part of an empirical profile.
    pub smooth: Option<EmpiricalTriple>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimumRule {
    /// `ℓ*(z) = 0` for every sample.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessProfile {
    pub convex_part: RelaxedBound,
    pub smooth_part: RelaxedBound,
    pub per_sample_optimum: OptimumRule,
    pub data_dependent: bool,
    /// Constants were supplied rather than derived; bounds are reported,
    /// never asserted.
    pub empirical: bool,
}

impl SmoothnessProfile {
    pub fn optimum(&self) -> f64 {
        match self.per_sample_optimum {
            OptimumRule::Zero => 0.0,
        }
    }

    /// `r_{Φ*}`, the exponent carried by the risk bounds.
    pub fn smooth_conjugate_order(&self) -> f64 {
        self.smooth_part.power.conjugate_order()
    }
}

/// Smallest softmax component over a batch of outputs.
pub fn softmax_min<'a>(outputs: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    outputs.into_iter().flat_map(softmax).fold(f64::INFINITY, f64::min)
}

pub fn profile(kind: LossKind, ctx: &ProfileContext) -> Result<SmoothnessProfile> {
    kind.validate()?;
    let exact = |convex: NormPower, smooth: NormPower, data_dependent| SmoothnessProfile {
        convex_part: RelaxedBound::exact(convex),
        smooth_part: RelaxedBound::exact(smooth),
        per_sample_optimum: OptimumRule::Zero,
        data_dependent,
        empirical: false,
    };
    match kind {
        LossKind::Mse => {
            let half = NormPower::half_squared_l2(1.0)?;
            Ok(exact(half, half, false))
        }
        LossKind::PnormPow { k: 2 } => {
            let sq = NormPower::new(Norm::L2, 2.0, 1.0)?;
            Ok(exact(sq, sq, false))
        }
        LossKind::SoftmaxCe => {
            let q = ctx
                .q_min
                .ok_or_else(|| Error::Domain("softmax_ce profile needs the batch q_min".into()))?;
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::Numeric(format!("softmax q_min must be positive, got {q}")));
            }
            let smooth = NormPower::new(Norm::L2, 2.0, 1.0 / q)?;
            let convex = NormPower::new(Norm::L1, 2.0, 1.0 / (2.0 * std::f64::consts::LN_2))?;
            Ok(exact(convex, smooth, true))
        }
        LossKind::L1 | LossKind::SmoothL1 { .. } | LossKind::PnormPow { .. } => {
            let (norm, order) = kind.empirical_shape();
            let default = EmpiricalTriple {
                scale: 1.0,
                order,
                relaxation: 0.0,
            };
            let part = |t: EmpiricalTriple| -> Result<RelaxedBound> {
                RelaxedBound::new(NormPower::new(norm, t.order, t.scale)?, t.relaxation)
            };
            Ok(SmoothnessProfile {
                convex_part: part(ctx.convex.unwrap_or(default))?,
                smooth_part: part(ctx.smooth.unwrap_or(default))?,
                per_sample_optimum: OptimumRule::Zero,
                data_dependent: false,
                empirical: true,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normpower::fy_loss;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    const ALL: [LossKind; 10] = [
        LossKind::Mse,
        LossKind::SoftmaxCe,
        LossKind::L1,
        LossKind::SmoothL1 { beta: 0.5 },
        LossKind::PnormPow { k: 1 },
        LossKind::PnormPow { k: 2 },
        LossKind::PnormPow { k: 3 },
        LossKind::PnormPow { k: 4 },
        LossKind::PnormPow { k: 5 },
        LossKind::PnormPow { k: 6 },
    ];

    #[test]
    fn eval_examples() {
        assert_eq!(loss_eval(LossKind::Mse, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_eval(LossKind::Mse, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        let ce = loss_eval(LossKind::SoftmaxCe, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((ce - LN_2).abs() < 1e-15);
        assert_eq!(
            loss_eval(LossKind::PnormPow { k: 3 }, &[2.0, 0.0], &[0.0, 1.0]).unwrap(),
            9.0
        );
        assert_eq!(
            loss_eval(LossKind::SmoothL1 { beta: 1.0 }, &[0.5, 3.0], &[0.0, 0.0]).unwrap(),
            0.125 + 2.5
        );
    }

    #[test]
    fn grad_examples() {
        assert_eq!(
            loss_grad_output(LossKind::Mse, &[1.0, 0.0], &[0.0, 0.0]).unwrap(),
            vec![1.0, 0.0]
        );
        let g = loss_grad_output(LossKind::SoftmaxCe, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        assert_eq!(
            loss_grad_output(LossKind::L1, &[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn errors() {
        assert!(loss_eval(LossKind::Mse, &[1.0], &[1.0, 2.0]).is_err());
        assert!(loss_eval(LossKind::SoftmaxCe, &[1.0, 2.0], &[0.5, 0.6]).is_err());
        assert!(loss_grad_output(LossKind::SoftmaxCe, &[1.0, 2.0], &[-0.5, 1.5]).is_err());
        assert!(LossKind::pnorm_pow(7).is_err());
        assert!(LossKind::pnorm_pow(0).is_err());
        assert!(profile(LossKind::SoftmaxCe, &ProfileContext::default()).is_err());
        let bad = ProfileContext {
            q_min: Some(0.0),
            ..Default::default()
        };
        assert!(matches!(profile(LossKind::SoftmaxCe, &bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("mse".parse::<LossKind>().unwrap(), LossKind::Mse);
        assert_eq!("pnorm_pow(4)".parse::<LossKind>().unwrap(), LossKind::PnormPow { k: 4 });
        assert_eq!(
            "smooth_l1(0.25)".parse::<LossKind>().unwrap(),
            LossKind::SmoothL1 { beta: 0.25 }
        );
        assert!("pnorm_pow(9)".parse::<LossKind>().is_err());
        assert!("hinge".parse::<LossKind>().is_err());
        for k in ALL {
            if let LossKind::SmoothL1 { .. } = k {
                continue;
            }
            assert_eq!(k.to_string().parse::<LossKind>().unwrap(), k);
        }
    }

    #[test]
    fn registry_constants() {
        let p = profile(LossKind::Mse, &ProfileContext::default()).unwrap();
        assert_eq!(p.smooth_part.power.scale(), 0.5);
        assert_eq!(p.convex_part.power.scale(), 0.5);
        assert_eq!(p.smooth_part.relaxation, 0.0);
        assert_eq!(p.optimum(), 0.0);
        assert!(!p.data_dependent && !p.empirical);

        let ctx = ProfileContext {
            q_min: Some(0.25),
            ..Default::default()
        };
        let ce = profile(LossKind::SoftmaxCe, &ctx).unwrap();
        assert_eq!(ce.smooth_part.power.scale(), 4.0);
        assert!((ce.convex_part.power.scale() - 0.72135).abs() < 1e-5);
        assert_eq!(ce.convex_part.power.norm(), Norm::L1);
        assert!(ce.data_dependent);

        let e = profile(LossKind::PnormPow { k: 4 }, &ProfileContext::default()).unwrap();
        assert!(e.empirical);
        assert_eq!(e.smooth_part.power.order(), 4.0);
        assert_eq!(e.smooth_part.power.norm(), Norm::Lp(4.0));
        let custom = ProfileContext {
            smooth: Some(EmpiricalTriple {
                scale: 3.0,
                order: 2.5,
                relaxation: 0.1,
            }),
            ..Default::default()
        };
        let e = profile(LossKind::L1, &custom).unwrap();
        assert_eq!(e.smooth_part.power.order(), 2.5);
        assert_eq!(e.smooth_part.relaxation, 0.1);
    }

    fn fd_grad(kind: LossKind, f: &[f64], y: &[f64]) -> Vec<f64> {
        let mut x = f.to_vec();
        (0..f.len())
            .map(|i| {
                let h = 1e-6 * (1.0 + f[i].abs());
                let o = x[i];
                x[i] = o + h;
                let up = loss_eval(kind, &x, y).unwrap();
                x[i] = o - h;
                let dn = loss_eval(kind, &x, y).unwrap();
                x[i] = o;
                (up - dn) / (2.0 * h)
            })
            .collect()
    }

    fn one_hot(n: usize, k: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            f in prop::collection::vec(-3.0f64..3.0, 4),
            y in prop::collection::vec(-3.0f64..3.0, 4),
            cls in 0usize..4,
        ) {
            for kind in ALL {
                let target = if kind == LossKind::SoftmaxCe { one_hot(4, cls) } else { y.clone() };
                // keep clear of the kinks of |·| and smooth_l1
                let kinks = f.iter().zip(&target).any(|(a, b)| {
                    let d = (a - b).abs();
                    d < 1e-3 || (d - 0.5).abs() < 1e-3
                });
                if kinks { continue; }
                let g = loss_grad_output(kind, &f, &target).unwrap();
                let fd = fd_grad(kind, &f, &target);
                for (a, b) in g.iter().zip(&fd) {
                    prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{kind}: {a} vs {b}");
                }
            }
        }

        #[test]
        fn losses_are_non_negative(f in prop::collection::vec(-5.0f64..5.0, 3), y in prop::collection::vec(-5.0f64..5.0, 3), cls in 0usize..3) {
            for kind in ALL {
                let target = if kind == LossKind::SoftmaxCe { one_hot(3, cls) } else { y.clone() };
                prop_assert!(loss_eval(kind, &f, &target).unwrap() >= 0.0);
            }
        }

        /// With `G(μ) = d_g(μ, s)` and `g = ½‖·‖²`, `G` is the MSE to `s` and
        /// its Fenchel-Young loss coincides with that of `g`.
        #[test]
        fn fy_loss_reduction_for_mse(
            mu in prop::collection::vec(-3.0f64..3.0, 3),
            nu in prop::collection::vec(-3.0f64..3.0, 3),
            s in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let g = NormPower::half_squared_l2(1.0).unwrap();
            let big_g = |m: &[f64]| loss_eval(LossKind::Mse, m, &s).unwrap();
            // G*(w) = ⟨s, w⟩ + ½‖w‖²
            let big_g_conj = |w: &[f64]| {
                w.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() + 0.5 * w.iter().map(|a| a * a).sum::<f64>()
            };
            let grad_nu = loss_grad_output(LossKind::Mse, &nu, &s).unwrap();
            let inner: f64 = mu.iter().zip(&grad_nu).map(|(a, b)| a * b).sum();
            let d_big = big_g(&mu) + big_g_conj(&grad_nu) - inner;
            let d_small = fy_loss(&g, &mu, &nu).unwrap();
            prop_assert!((d_big - d_small).abs() <= 1e-10 * (1.0 + d_small));
        }

        #[test]
        fn output_space_sandwich_mse(f in prop::collection::vec(-4.0f64..4.0, 5), y in prop::collection::vec(-4.0f64..4.0, 5)) {
            let p = profile(LossKind::Mse, &ProfileContext::default()).unwrap();
            let e = loss_grad_output(LossKind::Mse, &f, &y).unwrap();
            let l = loss_eval(LossKind::Mse, &f, &y).unwrap() - p.optimum();
            let lo = p.smooth_part.power.conjugate().unwrap().eval(&e).unwrap() - p.smooth_part.relaxation;
            let hi = p.convex_part.power.conjugate().unwrap().eval(&e).unwrap() + p.convex_part.relaxation;
            prop_assert!(l - lo >= -1e-9 && hi - l >= -1e-9);
        }

        #[test]
        fn output_space_lower_bound_softmax_ce(f in prop::collection::vec(-6.0f64..6.0, 4), cls in 0usize..4) {
            let y = one_hot(4, cls);
            let q_min = softmax_min([f.as_slice()]);
            let p = profile(LossKind::SoftmaxCe, &ProfileContext { q_min: Some(q_min), ..Default::default() }).unwrap();
            let e = loss_grad_output(LossKind::SoftmaxCe, &f, &y).unwrap();
            let l = loss_eval(LossKind::SoftmaxCe, &f, &y).unwrap();
            let lo = p.smooth_part.power.conjugate().unwrap().eval(&e).unwrap();
            prop_assert!(l - lo >= -1e-9);
        }
    }

    /// For one-hot targets, `φ*(∇_f ℓ) = (ln 2 / 2)(1 − q_y)²` while
    /// `ℓ = −ln q_y ≥ 1 − q_y`, so the convex-side upper bound only closes at
    /// the optimum `q_y = 1`.
    #[test]
    fn softmax_ce_output_space_upper_bound_is_loose_only_at_optimum() {
        let y = one_hot(3, 0);
        for f in [[0.0, 0.0, 0.0], [3.0, 0.0, -1.0], [-2.0, 1.0, 0.5], [8.0, 0.0, 0.0]] {
            let q_min = softmax_min([f.as_slice()]);
            let p = profile(
                LossKind::SoftmaxCe,
                &ProfileContext {
                    q_min: Some(q_min),
                    ..Default::default()
                },
            )
            .unwrap();
            let e = loss_grad_output(LossKind::SoftmaxCe, &f, &y).unwrap();
            let l = loss_eval(LossKind::SoftmaxCe, &f, &y).unwrap();
            let hi = p.convex_part.power.conjugate().unwrap().eval(&e).unwrap();
            let q = softmax(&f)[0];
            assert!((hi - LN_2 / 2.0 * (1.0 - q).powi(2)).abs() < 1e-12);
            assert!(l > hi, "f = {f:?}: loss {l} vs upper {hi}");
        }
    }
}
