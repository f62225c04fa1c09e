//! `trace.csv`: one row per diagnostic event.
//!
//! | column | meaning |
//! |---|---|
//! | `step` | optimizer step at which diagnostics ran (before that step's update) |
//! | `train_loss` | mean loss on the step's training batch |
//! | `loss` | mean `ℓ − ℓ*` on the diagnostic batch |
//! | `lower_bound`, `upper_bound` | dataset-wide sandwich on the diagnostic batch |
//! | `log_loss`, `log_lower_bound`, `log_upper_bound` | natural logs, floored at `1e-300` |
//! | `log_local_grad_norm` | log of `(1/n) Σ ‖∇_θ ℓ‖^{r*}` |
//! | `U`, `L`, `D`, `S` | structural error of the diagnostic batch |
//! | `lambda_min`, `lambda_max` | extreme eigenvalues over the batch |
//! | `degenerate` | 1 when `λ_min` fell below the floor |
//! | `q_min` | smallest softmax component over the batch |
//! | `pearson_upper`, `pearson_lower` | sliding correlation of `log_loss` with the log bounds over the last `w` events; empty until `w` events exist |
//! | `pearson_flag` | 1 when a window had zero variance or non-finite entries |
//! | `M` | measured gradient correlation factor; empty when not sampled |
//!
//! Floats use the shortest round-trip rendering, switching to exponent form
//! outside `[1e-5, 1e16)`; infinities are `inf`/`-inf`.

use std::io::{Read, Write};

use crate::error::{CliError, CliResult};

pub const TRACE_HEADER: [&str; 21] = [
    "step",
    "train_loss",
    "loss",
    "lower_bound",
    "upper_bound",
    "log_loss",
    "log_lower_bound",
    "log_upper_bound",
    "log_local_grad_norm",
    "U",
    "L",
    "D",
    "S",
    "lambda_min",
    "lambda_max",
    "degenerate",
    "q_min",
    "pearson_upper",
    "pearson_lower",
    "pearson_flag",
    "M",
];

pub const LOG_FLOOR: f64 = 1e-300;

/// `ln(max(v, 1e-300))`, keeping `+inf`.
pub fn floored_ln(v: f64) -> f64 {
    if v == f64::INFINITY {
        v
    } else {
        v.max(LOG_FLOOR).ln()
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v == 0.0 || (1e-5..1e16).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn parse_float(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub train_loss: f64,
    pub loss: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub log_loss: f64,
    pub log_lower_bound: f64,
    pub log_upper_bound: f64,
    pub log_local_grad_norm: f64,
    pub u: f64,
    pub l: f64,
    pub d: f64,
    pub s: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub degenerate: bool,
    pub q_min: f64,
    pub pearson_upper: Option<f64>,
    pub pearson_lower: Option<f64>,
    pub pearson_flag: bool,
    pub m: Option<f64>,
}

impl TraceRecord {
    pub fn fields(&self) -> Vec<String> {
        let f = format_float;
        vec![
            self.step.to_string(),
            f(self.train_loss),
            f(self.loss),
            f(self.lower_bound),
            f(self.upper_bound),
            f(self.log_loss),
            f(self.log_lower_bound),
            f(self.log_upper_bound),
            f(self.log_local_grad_norm),
            f(self.u),
            f(self.l),
            f(self.d),
            f(self.s),
            f(self.lambda_min),
            f(self.lambda_max),
            u8::from(self.degenerate).to_string(),
            f(self.q_min),
            opt(self.pearson_upper),
            opt(self.pearson_lower),
            u8::from(self.pearson_flag).to_string(),
            opt(self.m),
        ]
    }

    /// `lower ≤ loss ≤ upper` with absolute slack.
    pub fn brackets(&self, slack: f64) -> bool {
        self.lower_bound <= self.loss + slack && self.loss <= self.upper_bound + slack
    }

    fn from_fields(rec: &csv::StringRecord, row: usize) -> CliResult<Self> {
        let bad = |col: &str| CliError::Data(format!("trace row {row}: bad `{col}` value"));
        let num = |i: usize| parse_float(&rec[i]).ok_or_else(|| bad(TRACE_HEADER[i]));
        let maybe = |i: usize| {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let flag = |i: usize| match &rec[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(TRACE_HEADER[i])),
        };
        Ok(Self {
            step: rec[0].parse().map_err(|_| bad("step"))?,
            train_loss: num(1)?,
            loss: num(2)?,
            lower_bound: num(3)?,
            upper_bound: num(4)?,
            log_loss: num(5)?,
            log_lower_bound: num(6)?,
            log_upper_bound: num(7)?,
            log_local_grad_norm: num(8)?,
            u: num(9)?,
            l: num(10)?,
            d: num(11)?,
            s: num(12)?,
            lambda_min: num(13)?,
            lambda_max: num(14)?,
            degenerate: flag(15)?,
            q_min: num(16)?,
            pearson_upper: maybe(17)?,
            pearson_lower: maybe(18)?,
            pearson_flag: flag(19)?,
            m: maybe(20)?,
        })
    }
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(w: W) -> CliResult<Self> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        inner.write_record(TRACE_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &TraceRecord) -> CliResult<()> {
        self.inner.write_record(r.fields())?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_trace(r: impl Read) -> CliResult<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("trace header: {e}")))?;
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(CliError::Data(
            "trace header does not match the expected columns".into(),
        ));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| CliError::Data(format!("trace row {}: {e}", i + 1)))?;
            TraceRecord::from_fields(&rec, i + 1)
        })
        .collect()
}
