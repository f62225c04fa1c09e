//! Training runs with periodic bound diagnostics.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use deepbound::data::{self, Dataset};
use deepbound::diagnostics::{self, Sample};
use deepbound::gicstat::{self, sliding_pearson};
use deepbound::model::{self, ParamModel};
use deepbound::optim::{self, BatchSampler, SgdState};
use deepbound::{rngs, LossKind};

use crate::config::{streams, DataSource, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::trace::{floored_ln, TraceRecord, TraceWriter};

/// Steps used when neither `optimizer.steps` nor `optimizer.epochs` is set.
pub const DEFAULT_STEPS: u64 = 1000;

pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let ds = match &cfg.data.source {
        DataSource::Synthetic {
            classes,
            per_class,
            dim,
            separation,
        } => data::synthetic(*classes, *per_class, *dim, *separation, cfg.data_seed()).map_err(CliError::data)?,
        DataSource::Idx {
            images,
            labels,
            classes,
        } => data::load_idx(images, labels, *classes).map_err(|e| match e {
            deepbound::Error::Io(io) => CliError::Data(format!("{}: {io}", images.display())),
            other => CliError::data(other),
        })?,
    };
    match cfg.data.subset_n {
        Some(n) => data::subset(&ds, n, rngs::derive_seed(cfg.data_seed(), streams::SUBSET)).map_err(CliError::data),
        None => Ok(ds),
    }
}

pub fn build_model(cfg: &ExperimentConfig, ds: &Dataset) -> CliResult<ParamModel> {
    let mc = cfg.model_config(ds.input_dim(), ds.target_dim());
    model::build(&mc).map_err(|e| CliError::Config(format!("model: {e}")))
}

/// Holds out the first `diagnostics.batch_size` rows; returns `(diag, train)`.
pub fn split(cfg: &ExperimentConfig, ds: &Dataset) -> CliResult<(Dataset, Dataset)> {
    let k = cfg.diagnostics.batch_size;
    if k >= ds.len() {
        return Err(CliError::Config(format!(
            "diagnostics.batch_size ({k}) leaves no training data out of {} rows",
            ds.len()
        )));
    }
    let diag = ds.gather(&(0..k).collect::<Vec<_>>()).map_err(CliError::data)?;
    let train = ds.gather(&(k..ds.len()).collect::<Vec<_>>()).map_err(CliError::data)?;
    Ok((diag, train))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub diag_events: usize,
    pub param_count: usize,
    pub train_samples: usize,
    pub diag_samples: usize,
    pub loss: String,
    pub adaptive_step: bool,
    /// Mean loss over the training set before the first update.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Largest measured gradient correlation factor.
    pub max_m: Option<f64>,
    /// Smallest `(1/n) Σ ‖∇_θ ℓ‖^{r*}` seen on the diagnostic batch.
    pub min_local_grad_norm: Option<f64>,
    /// `(lo, hi)` with `lo‖θ‖₂ ≤ Ω̄(θ) ≤ hi‖θ‖₂` for the configured `Ω`.
    pub omega_equivalence: (f64, f64),
    pub degenerate_rows: usize,
    /// Non-degenerate rows with `lower ≤ loss ≤ upper` violated.
    pub sandwich_violations: usize,
    /// Medians over the last `pearson_window` events, flagged windows excluded.
    pub median_pearson_upper: Option<f64>,
    pub median_pearson_lower: Option<f64>,
}

pub struct TrainOutcome {
    pub summary: RunSummary,
    pub theta: Vec<f64>,
    pub records: Vec<TraceRecord>,
}

fn total_steps(cfg: &ExperimentConfig, n_train: usize) -> u64 {
    match (cfg.optimizer.steps, cfg.optimizer.epochs) {
        (Some(s), _) => s,
        (None, Some(e)) => e * (n_train / cfg.optimizer.batch_size) as u64,
        (None, None) => DEFAULT_STEPS,
    }
}

fn dropout_loss_grad(
    kind: LossKind,
    m: &ParamModel,
    theta: &[f64],
    batch: &[Sample<'_>],
    rate: f64,
    seed: u64,
) -> deepbound::Result<(f64, Vec<f64>)> {
    let mut ev = m.apply_dropout(theta, rate, seed)?;
    let mut grad = vec![0.0; theta.len()];
    let mut total = 0.0;
    for (x, y) in batch {
        let tape = ev.forward(x)?;
        total += deepbound::loss::loss_eval(kind, tape.output(), y)?;
        let e = deepbound::loss::loss_grad_output(kind, tape.output(), y)?;
        tape.vjp_params_into(&e, &mut grad)?;
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, grad))
}

/// Correlation of the last `w` entries; `(value, flagged)`.
fn window_corr(x: &[f64], y: &[f64], w: usize) -> CliResult<(Option<f64>, bool)> {
    if x.len() < w {
        return Ok((None, false));
    }
    let (xs, ys) = (&x[x.len() - w..], &y[y.len() - w..]);
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Ok((None, true));
    }
    let p = sliding_pearson(xs, ys, w).map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok((Some(p.values[0]), p.zero_variance[0]))
}

fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

/// Trains per `cfg`, writing `trace.csv`, `summary.json` and checkpoints
/// under `out`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let m = build_model(cfg, &ds)?;
    let (diag, train) = split(cfg, &ds)?;
    if cfg.optimizer.batch_size > train.len() {
        return Err(CliError::Config(format!(
            "optimizer.batch_size ({}) exceeds the {} training rows",
            cfg.optimizer.batch_size,
            train.len()
        )));
    }
    let omega = cfg.omega().map_err(|e| CliError::Config(e.to_string()))?;
    let settings = cfg.diagnostic_settings();
    let kind = cfg.loss;
    let steps = total_steps(cfg, train.len());

    fs::create_dir_all(checkpoint_dir(out))?;
    let mut writer = TraceWriter::new(BufWriter::new(File::create(out.join("trace.csv"))?))?;

    let train_samples = train.samples();
    let diag_samples = diag.samples();
    let theta0 = m.init(cfg.init_scheme());
    let initial_loss = optim::mean_loss(kind, &m, &theta0, &train_samples)?;
    let mut state = SgdState::new(theta0, cfg.optimizer.lr, cfg.optimizer.momentum)?;
    let mut sampler = BatchSampler::new(
        train.len(),
        cfg.optimizer.batch_size,
        rngs::derive_seed(cfg.seed, streams::SAMPLER),
    )?;
    let dropout_seed = rngs::derive_seed(cfg.seed, streams::DROPOUT);
    let w = cfg.diagnostics.pearson_window;

    let mut records = Vec::new();
    let (mut hist_loss, mut hist_up, mut hist_lo) = (Vec::new(), Vec::new(), Vec::new());
    let mut max_m: Option<f64> = None;
    let mut min_lgn: Option<f64> = None;

    for step in 0..steps {
        let idx = sampler.next_batch().to_vec();
        let batch = train.select(&idx);
        let (train_loss, grad) = if cfg.model.dropout > 0.0 {
            dropout_loss_grad(
                kind,
                &m,
                &state.theta,
                &batch,
                cfg.model.dropout,
                rngs::derive_seed(dropout_seed, step),
            )?
        } else {
            optim::batch_loss_grad(kind, &m, &state.theta, &batch)?
        };

        let mut record = if step % cfg.diagnostics.stride == 0 {
            let r = diagnostics::dataset_bounds(kind, &m, &state.theta, &diag_samples, &settings)?;
            let log_loss = floored_ln(r.excess_loss);
            let (log_up, log_lo) = (floored_ln(r.upper_bound), floored_ln(r.lower_bound));
            hist_loss.push(log_loss);
            hist_up.push(log_up);
            hist_lo.push(log_lo);
            let (pu, fu) = window_corr(&hist_loss, &hist_up, w)?;
            let (pl, fl) = window_corr(&hist_loss, &hist_lo, w)?;
            min_lgn = Some(min_lgn.map_or(r.local_grad_norm, |v: f64| v.min(r.local_grad_norm)));
            let e = r.aggregate.error;
            Some(TraceRecord {
                step,
                train_loss,
                loss: r.excess_loss,
                lower_bound: r.lower_bound,
                upper_bound: r.upper_bound,
                log_loss,
                log_lower_bound: log_lo,
                log_upper_bound: log_up,
                log_local_grad_norm: floored_ln(r.local_grad_norm),
                u: e.u,
                l: e.l,
                d: e.d,
                s: e.s,
                lambda_min: r.aggregate.lambda_min,
                lambda_max: r.aggregate.lambda_max,
                degenerate: e.degenerate,
                q_min: r.q_min,
                pearson_upper: pu,
                pearson_lower: pl,
                pearson_flag: fu || fl,
                m: None,
            })
        } else {
            None
        };

        let measure = cfg.optimizer.m_stride > 0 && step % cfg.optimizer.m_stride == 0;
        let before = measure.then(|| state.theta.clone());
        if cfg.optimizer.adaptive_step {
            optim::optimal_sgd_step(&mut state, &omega, &grad)?;
        } else {
            optim::sgd_step(&mut state, &grad)?;
        }
        if let Some(b) = before {
            let v = optim::estimate_m(kind, &m, &b, &state.theta, &train_samples, &idx)?;
            max_m = Some(max_m.map_or(v, |c: f64| c.max(v)));
            if let Some(r) = record.as_mut() {
                r.m = Some(v);
            }
        }
        if let Some(r) = record {
            writer.write(&r)?;
            records.push(r);
        }
        let cs = cfg.optimizer.checkpoint_stride;
        if cs > 0 && (step + 1) % cs == 0 {
            model::write_theta(
                &checkpoint_dir(out).join(format!("step_{}.bin", step + 1)),
                &state.theta,
            )?;
        }
    }
    writer.finish()?;
    model::write_theta(&checkpoint_dir(out).join("final.bin"), &state.theta)?;

    let final_loss = optim::mean_loss(kind, &m, &state.theta, &train_samples)?;
    let tail = &records[records.len().saturating_sub(w)..];
    let med = |f: fn(&TraceRecord) -> Option<f64>| {
        let v: Vec<f64> = tail.iter().filter(|r| !r.pearson_flag).filter_map(f).collect();
        gicstat::median(&v)
    };
    let summary = RunSummary {
        steps,
        diag_events: records.len(),
        param_count: m.param_count(),
        train_samples: train.len(),
        diag_samples: diag.len(),
        loss: kind.to_string(),
        adaptive_step: cfg.optimizer.adaptive_step,
        initial_loss,
        final_loss,
        max_m,
        min_local_grad_norm: min_lgn,
        omega_equivalence: omega.power.equivalence_constants(m.param_count())?,
        degenerate_rows: records.iter().filter(|r| r.degenerate).count(),
        sandwich_violations: records.iter().filter(|r| !r.degenerate && !r.brackets(0.0)).count(),
        median_pearson_upper: med(|r| r.pearson_upper),
        median_pearson_lower: med(|r| r.pearson_lower),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(TrainOutcome {
        summary,
        theta: state.theta,
        records,
    })
}
