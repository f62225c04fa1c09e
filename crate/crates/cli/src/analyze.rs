//! Per-sample bound reports for a checkpoint.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use deepbound::diagnostics::{self, DatasetReport};
use deepbound::model;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::trace::format_float;
use crate::train::{build_model, load_dataset};

pub const ANALYZE_HEADER: [&str; 14] = [
    "index",
    "loss",
    "excess_loss",
    "lower_bound",
    "upper_bound",
    "local_grad_norm",
    "lambda_min",
    "lambda_max",
    "U",
    "L",
    "D",
    "S",
    "degenerate",
    "brackets",
];

/// Loads θ from `checkpoint`, evaluates every sample of the configured
/// dataset and writes `analyze.csv` (one row per sample plus an `all` row
/// with the dataset-wide bound).
pub fn run_analyze(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> CliResult<DatasetReport> {
    let ds = load_dataset(cfg)?;
    let m = build_model(cfg, &ds)?;
    let theta = model::read_theta(checkpoint).map_err(|e| match e {
        deepbound::Error::Io(io) => CliError::Data(format!("{}: {io}", checkpoint.display())),
        other => CliError::data(other),
    })?;
    if theta.len() != m.param_count() {
        return Err(CliError::Data(format!(
            "checkpoint holds {} parameters but the model has {}",
            theta.len(),
            m.param_count()
        )));
    }
    let report = diagnostics::dataset_bounds(cfg.loss, &m, &theta, &ds.samples(), &cfg.diagnostic_settings())?;
    fs::create_dir_all(out)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(out.join("analyze.csv"))?));
    w.write_record(ANALYZE_HEADER)?;
    let f = format_float;
    let flag = |b: bool| u8::from(b).to_string();
    for (i, s) in report.samples.iter().enumerate() {
        w.write_record([
            i.to_string(),
            f(s.loss),
            f(s.excess_loss),
            f(s.lower_bound),
            f(s.upper_bound),
            f(s.local_grad_norm_r),
            f(s.lambda_min),
            f(s.lambda_max),
            f(s.error.u),
            f(s.error.l),
            f(s.error.d),
            f(s.error.s),
            flag(s.degenerate()),
            flag(s.brackets(0.0)),
        ])?;
    }
    let a = &report.aggregate;
    w.write_record([
        "all".to_string(),
        f(report.loss),
        f(report.excess_loss),
        f(report.lower_bound),
        f(report.upper_bound),
        f(report.local_grad_norm),
        f(a.lambda_min),
        f(a.lambda_max),
        f(a.error.u),
        f(a.error.l),
        f(a.error.d),
        f(a.error.s),
        flag(report.degenerate()),
        flag(report.brackets(0.0)),
    ])?;
    w.flush()?;
    Ok(report)
}
