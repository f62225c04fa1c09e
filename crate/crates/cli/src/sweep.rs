//! Structural error at initialization across depths, with and without skips.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use deepbound::diagnostics::{self, default_floor};
use deepbound::{gicstat, model, rngs, InitScheme};

use crate::config::{streams, ExperimentConfig};
use crate::error::CliResult;
use crate::trace::format_float;
use crate::train::load_dataset;

pub const SWEEP_HEADER: [&str; 9] = ["k", "skip", "seed", "U", "L", "D", "S", "lambda_min", "lambda_max"];
pub const SWEEP_SUMMARY_HEADER: [&str; 5] = ["k", "skip", "median_lambda_min", "median_U", "median_D"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub skip: bool,
    pub seed: u64,
    pub u: f64,
    pub l: f64,
    pub d: f64,
    pub s: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Evaluates `A_x` at the first data sample for every depth in
/// `sweep.depths`, both skip settings and `sweep.seeds` He/Xavier draws.
/// Both skip settings of a seed share the same initialization seed.
/// Writes `depth_sweep.csv` and `depth_sweep_summary.csv`.
pub fn run_depth_sweep(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<SweepRow>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let x = ds.input(0);
    let settings = cfg.diagnostic_settings();
    let base = rngs::derive_seed(cfg.seed, streams::SWEEP);
    let mut rows = Vec::new();
    for &k in &cfg.sweep.depths {
        for skip in [false, true] {
            let mut mc = cfg.model_config(ds.input_dim(), ds.target_dim());
            mc.block_count = k;
            mc.skip_connections = skip;
            let m = model::build(&mc)?;
            for seed in 0..cfg.sweep.seeds {
                let theta = m.init(InitScheme {
                    kind: cfg.init,
                    seed: rngs::derive_seed(base, seed),
                });
                let a = diagnostics::structural_matrix(&m, &theta, x)?;
                let eig = diagnostics::sym_eigenvalues(&a, None)?;
                let (lo, hi) = (eig[0], eig[eig.len() - 1]);
                let e = diagnostics::structural_error_in_base(
                    &eig,
                    settings.weights,
                    settings.floor.unwrap_or_else(|| default_floor(hi)),
                    settings.log_base,
                )?;
                rows.push(SweepRow {
                    k,
                    skip,
                    seed,
                    u: e.u,
                    l: e.l,
                    d: e.d,
                    s: e.s,
                    lambda_min: lo,
                    lambda_max: hi,
                });
            }
        }
    }
    fs::create_dir_all(out)?;
    let f = format_float;
    let writer = |name: &str| -> CliResult<csv::Writer<BufWriter<File>>> {
        Ok(csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(File::create(out.join(name))?)))
    };
    let mut w = writer("depth_sweep.csv")?;
    w.write_record(SWEEP_HEADER)?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            u8::from(r.skip).to_string(),
            r.seed.to_string(),
            f(r.u),
            f(r.l),
            f(r.d),
            f(r.s),
            f(r.lambda_min),
            f(r.lambda_max),
        ])?;
    }
    w.flush()?;
    let mut w = writer("depth_sweep_summary.csv")?;
    w.write_record(SWEEP_SUMMARY_HEADER)?;
    for &k in &cfg.sweep.depths {
        for skip in [false, true] {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.k == k && r.skip == skip).collect();
            let med = |g: fn(&SweepRow) -> f64| {
                let v: Vec<f64> = group.iter().map(|r| g(r)).collect();
                f(gicstat::median(&v).unwrap_or(f64::NAN))
            };
            w.write_record([
                k.to_string(),
                u8::from(skip).to_string(),
                med(|r| r.lambda_min),
                med(|r| r.u),
                med(|r| r.d),
            ])?;
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Median `λ_min` of the rows matching `(k, skip)`.
pub fn median_lambda_min(rows: &[SweepRow], k: usize, skip: bool) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.k == k && r.skip == skip)
        .map(|r| r.lambda_min)
        .collect();
    gicstat::median(&v)
}
