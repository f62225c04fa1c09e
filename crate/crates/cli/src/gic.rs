//! Gradient-independence reports for a configured model.

use std::fs;
use std::path::Path;

use serde::Serialize;

use deepbound::gicstat::{self, ContainmentReport, GicReport};
use deepbound::{model, rngs};

use crate::config::{streams, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::train::{build_model, load_dataset};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GicSummary {
    pub n_columns: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub fraction_norm_ok: f64,
    pub fraction_inner_ok: f64,
    pub max_abs_inner: f64,
    pub min_norm: f64,
    pub passes: bool,
}

impl From<GicReport> for GicSummary {
    fn from(r: GicReport) -> Self {
        Self {
            n_columns: r.n_columns,
            dim: r.dim,
            epsilon: r.epsilon,
            fraction_norm_ok: r.fraction_norm_ok,
            fraction_inner_ok: r.fraction_inner_ok,
            max_abs_inner: r.max_abs_inner,
            min_norm: r.min_norm,
            passes: r.passes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentSummary {
    pub theta_count: usize,
    pub mf: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub u_max: f64,
    pub d_max: f64,
    pub within_u: usize,
    pub within_d: usize,
    pub within_both: usize,
    pub fraction: f64,
    pub median_u: f64,
    pub median_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GicOutcome {
    pub init: GicSummary,
    pub checkpoint: Option<GicSummary>,
    pub containment: Option<ContainmentSummary>,
}

pub fn containment_summary(cfg: &ExperimentConfig) -> CliResult<(ContainmentReport, ContainmentSummary)> {
    let g = &cfg.gic;
    let eps = g.epsilon.unwrap_or(1.0);
    let r = gicstat::containment(
        g.theta_count,
        g.mf,
        eps,
        g.trials,
        rngs::derive_seed(cfg.seed, streams::MONTE_CARLO),
    )?;
    let s = ContainmentSummary {
        theta_count: g.theta_count,
        mf: g.mf,
        epsilon: eps,
        trials: r.trials,
        u_max: r.u_max,
        d_max: r.d_max,
        within_u: r.within_u,
        within_d: r.within_d,
        within_both: r.within_both,
        fraction: r.fraction(),
        median_u: r.median_u,
        median_d: r.median_d,
    };
    Ok((r, s))
}

/// Checks the Jacobian at the first data sample, at initialization and
/// optionally at a checkpoint, and runs the ball-sampling containment
/// experiment when `monte_carlo` is set. Writes `gic.json`.
pub fn run_gic(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    monte_carlo: bool,
    out: &Path,
) -> CliResult<GicOutcome> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let m = build_model(cfg, &ds)?;
    let x = ds.input(0);
    let check = |theta: &[f64]| -> CliResult<GicSummary> {
        let j = m.jacobian(theta, x)?;
        Ok(gicstat::gic_check(&j, cfg.gic.epsilon, cfg.gic.pass_constant)?.into())
    };
    let init = check(&m.init(cfg.init_scheme()))?;
    let checkpoint = match checkpoint.or(cfg.gic.checkpoint.as_deref()) {
        Some(p) => {
            let theta = model::read_theta(p).map_err(CliError::data)?;
            if theta.len() != m.param_count() {
                return Err(CliError::Data(format!(
                    "checkpoint holds {} parameters but the model has {}",
                    theta.len(),
                    m.param_count()
                )));
            }
            Some(check(&theta)?)
        }
        None => None,
    };
    let containment = if monte_carlo || cfg.gic.monte_carlo {
        Some(containment_summary(cfg)?.1)
    } else {
        None
    };
    let outcome = GicOutcome {
        init,
        checkpoint,
        containment,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("gic.json"), serde_json::to_string_pretty(&outcome)? + "\n")?;
    Ok(outcome)
}
