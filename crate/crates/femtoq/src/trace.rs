//! Trace serialization and reporting: CSV traces, human/machine run
//! summaries, and static SVG line charts.

use crate::error::{Error, Result};
use crate::oracle::OracleResult;
use crate::simulator::IterationRecord;
use std::fmt::Write as _;
use std::path::Path;

/// Format with `sig` significant decimal digits, plain notation for
/// moderate magnitudes and scientific otherwise.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if exp < -4 || exp >= sig as i32 {
        format!("{:.*e}", sig - 1, x)
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        format!("{:.*}", decimals, x)
    }
}

fn f9(x: f64) -> String {
    fmt_sig(x, 9)
}

/// CSV header for a trace over `subcarriers` subcarriers.
pub fn trace_csv_header(subcarriers: usize) -> String {
    let mut cols = vec!["iteration".to_string(), "n_femto".to_string()];
    cols.extend((1..=subcarriers).map(|k| format!("macro_c_k{k}")));
    cols.extend(
        ["agg_femto", "mean_reward", "messages", "epsilon", "converged"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

/// Render a trace as CSV text: fixed header, one row per record, floats
/// with 9 significant digits, LF line endings.
pub fn trace_to_csv(trace: &[IterationRecord], subcarriers: usize) -> String {
    let mut out = trace_csv_header(subcarriers);
    out.push('\n');
    for r in trace {
        debug_assert_eq!(r.macro_capacity.len(), subcarriers);
        write!(out, "{},{}", r.iteration, r.n_femto).unwrap();
        for c in &r.macro_capacity {
            write!(out, ",{}", f9(*c)).unwrap();
        }
        write!(
            out,
            ",{},{},{},{},{}",
            f9(r.aggregate_femto_capacity),
            f9(r.mean_reward),
            r.messages,
            f9(r.epsilon),
            u8::from(r.converged)
        )
        .unwrap();
        out.push('\n');
    }
    out
}

pub fn write_trace_csv(
    trace: &[IterationRecord],
    subcarriers: usize,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, trace_to_csv(trace, subcarriers))
        .map_err(|e| Error::Config(format!("cannot write trace to {}: {e}", path.display())))
}

/// Parse a trace CSV produced by [`trace_to_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("trace CSV is empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 7 || cols[0] != "iteration" || cols[1] != "n_femto" {
        return Err(Error::Config("unrecognized trace CSV header".into()));
    }
    let subcarriers = cols.len() - 7;
    if cols[2 + subcarriers] != "agg_femto" {
        return Err(Error::Config("unrecognized trace CSV header".into()));
    }

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Config(format!("trace CSV row {} has wrong arity", i + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("trace CSV row {}: bad number `{s}`", i + 2)))
        };
        records.push(IterationRecord {
            iteration: fields[0]
                .parse()
                .map_err(|_| Error::Config(format!("trace CSV row {}: bad iteration", i + 2)))?,
            n_femto: fields[1]
                .parse()
                .map_err(|_| Error::Config(format!("trace CSV row {}: bad n_femto", i + 2)))?,
            macro_capacity: fields[2..2 + subcarriers]
                .iter()
                .map(|s| num(s))
                .collect::<Result<_>>()?,
            aggregate_femto_capacity: num(fields[2 + subcarriers])?,
            mean_reward: num(fields[3 + subcarriers])?,
            messages: fields[4 + subcarriers]
                .parse()
                .map_err(|_| Error::Config(format!("trace CSV row {}: bad messages", i + 2)))?,
            epsilon: num(fields[5 + subcarriers])?,
            converged: fields[6 + subcarriers] == "1",
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Run summary
// ---------------------------------------------------------------------------

/// Oracle-versus-policy comparison embedded in a summary.
#[derive(Debug, Clone)]
pub struct OracleComparison {
    pub oracle: OracleResult,
    pub greedy_total_femto: f64,
    pub greedy_macro_aggregate: f64,
    pub greedy_in_band: bool,
}

impl OracleComparison {
    pub fn ratio(&self) -> f64 {
        if self.oracle.best_total_femto > 0.0 {
            self.greedy_total_femto / self.oracle.best_total_femto
        } else {
            f64::NAN
        }
    }
}

/// End-of-run digest; every statistic is recomputable from the CSV trace.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// The scenario in canonical serialized form.
    pub scenario_echo: String,
    pub final_converged: bool,
    /// Per deployment: (iteration, iterations until an in-band window, window length used).
    pub reconvergence: Vec<(u64, Option<u64>, usize)>,
    pub final_window_mean_agg_femto: f64,
    pub final_window_len: usize,
    pub total_messages: u64,
    pub oracle: Option<OracleComparison>,
    pub wall_time_secs: f64,
}

impl RunSummary {
    /// Human-readable text with a trailing machine-readable block.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("run summary\n===========\n\n");
        out.push_str(&format!(
            "converged over final {} records: {}\n",
            self.final_window_len, self.final_converged
        ));
        out.push_str(&format!(
            "mean aggregate femto capacity over final {} records: {} bits/s/Hz\n",
            self.final_window_len,
            f9(self.final_window_mean_agg_femto)
        ));
        out.push_str(&format!("total cooperation messages: {}\n", self.total_messages));
        for (iter, delta, window) in &self.reconvergence {
            match delta {
                Some(d) => out.push_str(&format!(
                    "deployment at {iter}: re-converged after {d} iterations (window {window})\n"
                )),
                None => out.push_str(&format!(
                    "deployment at {iter}: never re-converged (window {window})\n"
                )),
            }
        }
        if let Some(cmp) = &self.oracle {
            out.push_str(&format!(
                "oracle optimum: {} bits/s/Hz over {} feasible of {} evaluated\n",
                f9(cmp.oracle.best_total_femto),
                cmp.oracle.feasible_count,
                cmp.oracle.evaluated_count
            ));
            out.push_str(&format!(
                "greedy policy: {} bits/s/Hz ({} of optimum), macro {} bits/s/Hz, in band: {}\n",
                f9(cmp.greedy_total_femto),
                f9(cmp.ratio()),
                f9(cmp.greedy_macro_aggregate),
                cmp.greedy_in_band
            ));
        }
        out.push_str(&format!("wall time: {:.3} s\n", self.wall_time_secs));

        out.push_str("\n[machine]\n");
        out.push_str(&format!("final_converged = {}\n", self.final_converged));
        out.push_str(&format!(
            "final_window_mean_agg_femto = {}\n",
            f9(self.final_window_mean_agg_femto)
        ));
        out.push_str(&format!("final_window_len = {}\n", self.final_window_len));
        out.push_str(&format!("total_messages = {}\n", self.total_messages));
        for (iter, delta, window) in &self.reconvergence {
            out.push_str(&format!(
                "reconvergence_{iter} = {} (window {window})\n",
                delta.map_or("none".into(), |d| d.to_string())
            ));
        }
        if let Some(cmp) = &self.oracle {
            out.push_str(&format!(
                "oracle_best_total_femto = {}\n",
                f9(cmp.oracle.best_total_femto)
            ));
            out.push_str(&format!("oracle_feasible_count = {}\n", cmp.oracle.feasible_count));
            out.push_str(&format!("oracle_evaluated_count = {}\n", cmp.oracle.evaluated_count));
            out.push_str(&format!("greedy_total_femto = {}\n", f9(cmp.greedy_total_femto)));
            out.push_str(&format!("greedy_ratio = {}\n", f9(cmp.ratio())));
            out.push_str(&format!(
                "greedy_macro_aggregate = {}\n",
                f9(cmp.greedy_macro_aggregate)
            ));
            out.push_str(&format!("greedy_in_band = {}\n", cmp.greedy_in_band));
        }
        out.push_str(&format!("wall_time_secs = {:.3}\n", self.wall_time_secs));
        out.push_str("\n[scenario]\n");
        out.push_str(&self.scenario_echo);
        out
    }
}

// ---------------------------------------------------------------------------
// SVG charts
// ---------------------------------------------------------------------------

/// A single-series line chart with an optional shaded horizontal band.
pub fn line_chart_svg(
    points: &[(f64, f64)],
    title: &str,
    x_label: &str,
    y_label: &str,
    band: Option<(f64, f64)>,
) -> String {
    const W: f64 = 800.0;
    const H: f64 = 420.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 55.0;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if let Some((lo, hi)) = band {
        y_min = y_min.min(lo);
        y_max = y_max.max(hi);
    }
    if points.is_empty() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_min == x_max {
        x_max = x_min + 1.0;
    }
    if y_min == y_max {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let sx = |x: f64| ML + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MT + (y_max - y) / (y_max - y_min) * plot_h;
    let fmt = |v: f64| fmt_sig(v, 6);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if let Some((lo, hi)) = band {
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#cfe8cf\" opacity=\"0.7\"/>\n",
            fmt(ML),
            fmt(sy(hi)),
            fmt(plot_w),
            fmt(sy(lo) - sy(hi)),
        ));
    }
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    // Ticks and labels.
    for i in 0..=5 {
        let fx = x_min + (x_max - x_min) * i as f64 / 5.0;
        let px = sx(fx);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            fmt(px),
            H - MB,
            fmt(px),
            H - MB + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            fmt(px),
            H - MB + 18.0,
            fmt(fx)
        ));
        let fy = y_min + (y_max - y_min) * i as f64 / 5.0;
        let py = sy(fy);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
            ML - 5.0,
            fmt(py),
            fmt(py)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            ML - 8.0,
            fmt(py + 4.0),
            fmt(fy)
        ));
    }
    // Series.
    if !points.is_empty() {
        let path: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{},{}", fmt(sx(*x)), fmt(sy(*y))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.2\"/>\n",
            path.join(" ")
        ));
    }
    // Labels.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        ML + plot_w / 2.0,
        title
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        ML + plot_w / 2.0,
        H - 12.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {})\">{}</text>\n",
        MT + plot_h / 2.0,
        MT + plot_h / 2.0,
        y_label
    ));
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(svg: &str, path: &Path) -> Result<()> {
    std::fs::write(path, svg)
        .map_err(|e| Error::Config(format!("cannot write chart to {}: {e}", path.display())))
}
