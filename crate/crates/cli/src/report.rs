//! Static SVG charts and a markdown summary for a run directory.
//!
//! Every chart is 960×540. The plot area spans x ∈ [80, 900] and
//! y ∈ [50, 470] in canvas units; the x axis is the optimizer step and six
//! evenly spaced ticks label each axis. The title sits centred at y = 28,
//! the x-axis label at y = 520 and the y-axis label is rotated at x = 20.
//! The legend is stacked in the top-right corner of the plot area.
//! Non-finite samples break a series into separate polylines.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::Path;

use deepbound::gicstat;

use crate::error::{CliError, CliResult};
use crate::trace::{read_trace, TraceRecord};

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 540.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 900.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 470.0;
const TICKS: usize = 6;

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" {
            "0".into()
        } else {
            s.into()
        }
    }
}

/// Renders one line chart. `y_range` pins the vertical extent.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    y_range: Option<(f64, f64)>,
) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = y_range.unwrap_or_else(|| range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))));
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (RIGHT - LEFT);
    let sy = |y: f64| BOTTOM - (y - y0) / (y1 - y0) * (BOTTOM - TOP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="480" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="490" y="520" text-anchor="middle">{}</text>"#,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="260" text-anchor="middle" transform="rotate(-90 20 260)">{}</text>"#,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    for i in 0..TICKS {
        let t = i as f64 / (TICKS - 1) as f64;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{BOTTOM}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            BOTTOM + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            BOTTOM + 20.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    for (k, se) in series.iter().enumerate() {
        let mut seg: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, s: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    se.color,
                    seg.join(" ")
                );
            } else if let Some(p) = seg.first() {
                let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2" fill="{}"/>"#, se.color);
            }
            seg.clear();
        };
        for &(x, y) in &se.points {
            if x.is_finite() && y.is_finite() {
                seg.push(format!("{:.2},{:.2}", sx(x), sy(y.clamp(y0, y1))));
            } else {
                flush(&mut seg, &mut s);
            }
        }
        flush(&mut seg, &mut s);
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"#,
            RIGHT - 150.0,
            RIGHT - 126.0,
            se.color
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            RIGHT - 120.0,
            ly + 4.0,
            escape(se.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn series<'a>(
    name: &'a str,
    color: &'a str,
    rows: &[TraceRecord],
    f: impl Fn(&TraceRecord) -> Option<f64>,
) -> Series<'a> {
    Series {
        name,
        color,
        points: rows.iter().map(|r| (r.step as f64, f(r).unwrap_or(f64::NAN))).collect(),
    }
}

pub struct Charts {
    pub loss_bounds: String,
    pub pearson: String,
    pub indicators: String,
}

pub fn charts(rows: &[TraceRecord]) -> Charts {
    let loss_bounds = line_chart(
        "Loss and bounds (diagnostic batch)",
        "step",
        "natural log",
        &[
            series("log upper bound", "#d62728", rows, |r| Some(r.log_upper_bound)),
            series("log loss", "#1f77b4", rows, |r| Some(r.log_loss)),
            series("log lower bound", "#2ca02c", rows, |r| Some(r.log_lower_bound)),
        ],
        None,
    );
    let pearson = line_chart(
        "Sliding Pearson correlation",
        "step",
        "r",
        &[
            series("r(log loss, log upper)", "#d62728", rows, |r| r.pearson_upper),
            series("r(log loss, log lower)", "#2ca02c", rows, |r| r.pearson_lower),
        ],
        Some((-1.0, 1.0)),
    );
    let indicators = line_chart(
        "Structural indicators",
        "step",
        "value",
        &[
            series("U", "#9467bd", rows, |r| Some(r.u)),
            series("L", "#8c564b", rows, |r| Some(r.l)),
            series("D", "#e377c2", rows, |r| Some(r.d)),
            series("log local grad norm", "#7f7f7f", rows, |r| Some(r.log_local_grad_norm)),
        ],
        None,
    );
    Charts {
        loss_bounds,
        pearson,
        indicators,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub rows: usize,
    pub median_pearson_upper: Option<f64>,
    pub median_pearson_lower: Option<f64>,
}

pub fn summarize(rows: &[TraceRecord], window: usize) -> ReportSummary {
    let tail = &rows[rows.len().saturating_sub(window)..];
    let med = |f: fn(&TraceRecord) -> Option<f64>| {
        let v: Vec<f64> = tail.iter().filter(|r| !r.pearson_flag).filter_map(f).collect();
        gicstat::median(&v)
    };
    ReportSummary {
        rows: rows.len(),
        median_pearson_upper: med(|r| r.pearson_upper),
        median_pearson_lower: med(|r| r.pearson_lower),
    }
}

fn summary_markdown(rows: &[TraceRecord], s: &ReportSummary, window: usize) -> String {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let mut md = String::from("# Run summary\n\n");
    let _ = writeln!(md, "| quantity | value |\n|---|---|");
    let _ = writeln!(md, "| diagnostic events | {} |", s.rows);
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        let _ = writeln!(md, "| steps covered | {}..{} |", first.step, last.step);
        let _ = writeln!(md, "| final diagnostic loss | {:.6e} |", last.loss);
        let _ = writeln!(md, "| final lower bound | {:.6e} |", last.lower_bound);
        let _ = writeln!(md, "| final upper bound | {:.6e} |", last.upper_bound);
    }
    let _ = writeln!(
        md,
        "| degenerate rows | {} |",
        rows.iter().filter(|r| r.degenerate).count()
    );
    let _ = writeln!(
        md,
        "| rows outside the bounds | {} |",
        rows.iter().filter(|r| !r.degenerate && !r.brackets(0.0)).count()
    );
    let _ = writeln!(
        md,
        "| median r(log loss, log upper), last {window} events | {} |",
        fmt(s.median_pearson_upper)
    );
    let _ = writeln!(
        md,
        "| median r(log loss, log lower), last {window} events | {} |",
        fmt(s.median_pearson_lower)
    );
    md
}

/// Reads `run_dir/trace.csv` and writes `loss_bounds.svg`, `pearson.svg`,
/// `indicators.svg` and `summary.md` next to it.
pub fn run_report(run_dir: &Path, window: usize) -> CliResult<ReportSummary> {
    let path = run_dir.join("trace.csv");
    let file = File::open(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let rows = read_trace(file)?;
    let c = charts(&rows);
    fs::write(run_dir.join("loss_bounds.svg"), c.loss_bounds)?;
    fs::write(run_dir.join("pearson.svg"), c.pearson)?;
    fs::write(run_dir.join("indicators.svg"), c.indicators)?;
    let s = summarize(&rows, window);
    fs::write(run_dir.join("summary.md"), summary_markdown(&rows, &s, window))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_chart_has_axes_only() {
        let svg = line_chart("t", "x", "y", &[], None);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(r#"width="960" height="540""#));
        assert!(!svg.contains("polyline"));
        assert_eq!(svg.matches("<line").count(), 2 * TICKS);
    }

    #[test]
    fn non_finite_points_split_lines() {
        let s = Series {
            name: "a",
            color: "red",
            points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::INFINITY), (3.0, 1.0), (4.0, 0.5)],
        };
        let svg = line_chart("t", "x", "y", &[s], None);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(0.0), "0");
        assert_eq!(tick_label(2.5), "2.5");
        assert_eq!(tick_label(-690.7758), "-690.776");
        assert_eq!(tick_label(1e-7), "1.00e-7");
    }
}
