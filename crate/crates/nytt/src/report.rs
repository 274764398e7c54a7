//! CSV / JSON / SVG rendering of results tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nytt_core::metrics::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{to_json_pretty, write_atomic};
use crate::table::{CellStatus, ResultsTable};

/// Metrics drawn in sweep plots.
pub const PLOT_METRICS: [&str; 2] = ["si_sdr", "lsd"];
pub const LOG_FILE: &str = "report.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Csv,
    Json,
    Plots,
}

impl ReportKind {
    pub const ALL: [ReportKind; 3] = [ReportKind::Csv, ReportKind::Json, ReportKind::Plots];
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    /// Written files, in writing order (the log comes last).
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

fn results_csv(t: &ResultsTable) -> Result<Vec<u8>> {
    let metrics = t.metric_names();
    let mut header: Vec<String> = vec!["condition".into()];
    header.extend(t.axes.iter().map(|a| a.name.clone()));
    header.extend(["seed", "method", "status", "reason"].map(String::from));
    header.extend(metrics.iter().cloned());
    let rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![r.condition.clone()];
            v.extend(t.axes.iter().map(|a| r.point(&a.name).map(|p| p.label.clone()).unwrap_or_default()));
            let (status, reason) = match &r.status {
                CellStatus::Ok => ("ok", ""),
                CellStatus::Failed { reason } => ("failed", reason.as_str()),
            };
            v.extend([r.seed.to_string(), r.method.clone(), status.into(), reason.into()]);
            v.extend(metrics.iter().map(|m| r.metrics.get(m).map(|x| num(*x)).unwrap_or_default()));
            v
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Per-seed values plus their mean, for every (condition, method, metric).
fn summary_csv(t: &ResultsTable) -> Result<Vec<u8>> {
    let seeds = t.seeds();
    let mut header: Vec<String> = ["condition", "method", "metric", "mean", "n"].map(String::from).to_vec();
    header.extend(seeds.iter().map(|s| format!("seed{s}")));
    let mut rows = Vec::new();
    for c in t.conditions() {
        for m in t.methods() {
            for metric in t.metric_names() {
                let vals = t.per_seed(c, m, &metric);
                if vals.is_empty() {
                    continue;
                }
                let mean = vals.iter().map(|v| v.1).sum::<f64>() / vals.len() as f64;
                let mut row = vec![c.to_string(), m.to_string(), metric.clone(), num(mean), vals.len().to_string()];
                row.extend(seeds.iter().map(|s| vals.iter().find(|v| v.0 == *s).map(|v| num(v.1)).unwrap_or_default()));
                rows.push(row);
            }
        }
    }
    csv_bytes(&header, &rows)
}

fn trends_csv(t: &ResultsTable) -> Result<Vec<u8>> {
    let header = ["axis", "metric", "method", "group", "seed", "spearman", "slope", "points"].map(String::from);
    let rows: Vec<Vec<String>> = t
        .trends
        .iter()
        .map(|tr| {
            let pts = tr.points.iter().map(|p| format!("{}:{}", num(p[0]), num(p[1]))).collect::<Vec<_>>().join(";");
            vec![
                tr.axis.clone(),
                tr.metric.clone(),
                tr.method.clone(),
                tr.group.clone(),
                tr.seed.map_or("mean".into(), |s| s.to_string()),
                num(tr.spearman),
                num(tr.slope),
                pts,
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// One row per item plus a final `mean` row.
pub fn metrics_csv(report: &MetricsReport) -> Result<Vec<u8>> {
    let names: Vec<String> = report.aggregate.keys().cloned().collect();
    let mut header = vec!["item_id".to_string()];
    header.extend(names.iter().cloned());
    let mut rows: Vec<Vec<String>> = report
        .per_item
        .iter()
        .map(|(id, m)| {
            std::iter::once(id.clone())
                .chain(names.iter().map(|n| m.get(n).map(|v| num(*v)).unwrap_or_default()))
                .collect()
        })
        .collect();
    rows.push(std::iter::once("mean".to_string()).chain(names.iter().map(|n| num(report.aggregate[n]))).collect());
    csv_bytes(&header, &rows)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 220.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

fn line_chart(title: &str, x_label: &str, y_label: &str, x_ticks: &[(f64, String)], series: &[Series]) -> String {
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        esc(title)
    );
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let y = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"##,
            LEFT + pw,
            sy(y),
            sy(y),
            LEFT - 6.0,
            sy(y) + 4.0
        );
    }
    for (x, label) in x_ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(*x),
            TOP + ph + 18.0,
            esc(label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 15.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(y_label)
    );
    for (i, se) in series.iter().enumerate() {
        let color = if se.name == "unprocessed" { "#777" } else { PALETTE[i % PALETTE.len()] };
        let dash = if se.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let pts = se.points.iter().map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.1))).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#);
        for p in &se.points {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, sx(p.0), sy(p.1));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - RIGHT + 12.0,
            W - RIGHT + 36.0,
            W - RIGHT + 42.0,
            ly + 4.0,
            esc(&se.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn grid_chart(title: &str, rows: &[String], cols: &[String], values: &BTreeMap<(usize, usize), f64>) -> String {
    let cell_w = 110.0;
    let cell_h = 36.0;
    let left = 200.0;
    let top = 70.0;
    let w = left + cell_w * cols.len() as f64 + 20.0;
    let h = top + cell_h * rows.len() as f64 + 20.0;
    let (lo, hi) = range(values.values().copied());
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(title));
    for (j, c) in cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            left + cell_w * (j as f64 + 0.5),
            top - 10.0,
            esc(c)
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let y = top + cell_h * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + cell_h / 2.0 + 4.0,
            esc(r)
        );
        for j in 0..cols.len() {
            let x = left + cell_w * j as f64;
            match values.get(&(i, j)) {
                Some(v) => {
                    let a = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                    let shade = (255.0 - 155.0 * a).round() as u8;
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_w}" height="{cell_h}" fill="rgb({shade},{shade},255)" stroke="white"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
                        x + cell_w / 2.0,
                        y + cell_h / 2.0 + 4.0
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect x="{x:.1}" y="{y:.1}" width="{cell_w}" height="{cell_h}" fill="#eee" stroke="white"/>"##
                    );
                }
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One line per (method, other-axis labels); x is the axis value for
/// numeric axes and the point index otherwise.
fn axis_plot(t: &ResultsTable, axis: &str, numeric: bool, metric: &str) -> Option<String> {
    let mut labels: Vec<(f64, String)> = Vec::new();
    let mut series: Vec<(String, BTreeMap<u64, Vec<f64>>)> = Vec::new();
    let mut baseline: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in &t.rows {
        let Some(p) = r.point(axis) else { continue };
        let idx = match labels.iter().position(|l| l.1 == p.label) {
            Some(i) => i,
            None => {
                labels.push((p.value, p.label.clone()));
                labels.len() - 1
            }
        };
        let x = if numeric { p.value } else { idx as f64 };
        let Some(v) = r.metric(metric) else { continue };
        let others: Vec<String> =
            r.points.iter().filter(|q| q.axis != axis).map(|q| format!("{}={}", q.axis, q.label)).collect();
        let name = if others.is_empty() { r.method.clone() } else { format!("{} ({})", r.method, others.join(",")) };
        let pos = series.iter().position(|s| s.0 == name).unwrap_or_else(|| {
            series.push((name, BTreeMap::new()));
            series.len() - 1
        });
        series[pos].1.entry(x.to_bits()).or_default().push(v);
        if let Some(u) = r.metric(&format!("unprocessed_{metric}")) {
            baseline.entry(x.to_bits()).or_default().push(u);
        }
    }
    let to_points = |m: &BTreeMap<u64, Vec<f64>>| {
        let mut pts: Vec<(f64, f64)> = m.iter().filter_map(|(k, v)| mean(v).map(|y| (f64::from_bits(*k), y))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    };
    let mut lines: Vec<Series> =
        series.iter().map(|(n, m)| Series { name: n.clone(), points: to_points(m), dashed: false }).collect();
    if lines.is_empty() {
        return None;
    }
    if !baseline.is_empty() {
        lines.push(Series { name: "unprocessed".into(), points: to_points(&baseline), dashed: true });
    }
    let ticks: Vec<(f64, String)> =
        labels.iter().enumerate().map(|(i, (v, l))| (if numeric { *v } else { i as f64 }, l.clone())).collect();
    Some(line_chart(&format!("{}: {metric}", t.experiment), axis, metric, &ticks, &lines))
}

fn iteration_plot(t: &ResultsTable) -> Option<String> {
    let mut series: Vec<(String, BTreeMap<u64, Vec<f64>>, bool)> = Vec::new();
    for r in &t.rows {
        let Some(it) = r.metric("iteration") else { continue };
        let base = r.method.split('@').next().unwrap_or(&r.method);
        let cond = if r.condition == "base" { String::new() } else { format!(" ({})", r.condition) };
        for (metric, dashed) in [("si_sdr", false), ("target_si_sdr", true)] {
            let Some(v) = r.metric(metric) else { continue };
            let name = format!("{base}{cond} {metric}");
            let pos = series.iter().position(|s| s.0 == name).unwrap_or_else(|| {
                series.push((name, BTreeMap::new(), dashed));
                series.len() - 1
            });
            series[pos].1.entry(it.to_bits()).or_default().push(v);
        }
    }
    if series.is_empty() {
        return None;
    }
    let mut iters: Vec<f64> = Vec::new();
    let lines: Vec<Series> = series
        .iter()
        .map(|(n, m, d)| {
            let pts: Vec<(f64, f64)> = m.iter().filter_map(|(k, v)| mean(v).map(|y| (f64::from_bits(*k), y))).collect();
            for p in &pts {
                if !iters.contains(&p.0) {
                    iters.push(p.0);
                }
            }
            Series { name: n.clone(), points: pts, dashed: *d }
        })
        .collect();
    iters.sort_by(f64::total_cmp);
    let ticks: Vec<(f64, String)> = iters.iter().map(|i| (*i, format!("{i}"))).collect();
    Some(line_chart(&format!("{}: iterations", t.experiment), "iteration", "SI-SDR (dB)", &ticks, &lines))
}

fn roles_grid(t: &ResultsTable, metric: &str) -> Option<String> {
    let mut rows: Vec<String> = Vec::new();
    let cols: Vec<String> = t.methods().into_iter().map(String::from).collect();
    let mut acc: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in &t.rows {
        let Some(p) = r.point("noise_roles") else { continue };
        let i = rows.iter().position(|l| *l == p.label).unwrap_or_else(|| {
            rows.push(p.label.clone());
            rows.len() - 1
        });
        let j = cols.iter().position(|c| *c == r.method).expect("method listed");
        if let Some(v) = r.metric(metric) {
            acc.entry((i, j)).or_default().push(v);
        }
    }
    if acc.is_empty() {
        return None;
    }
    let values = acc.iter().filter_map(|(k, v)| mean(v).map(|m| (*k, m))).collect();
    Some(grid_chart(&format!("{}: {metric} by noise roles", t.experiment), &rows, &cols, &values))
}

/// Writes the requested renderings of `table` into `dir` plus a log of
/// warnings. Identical tables give byte-identical files.
pub fn emit_report(table: &ResultsTable, kinds: &[ReportKind], dir: &Path) -> Result<ReportOutput> {
    if table.rows.is_empty() {
        return Err(Error::Config("cannot report an empty table".into()));
    }
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, bytes)?;
        files.push(p);
        Ok(())
    };
    for kind in kinds {
        match kind {
            ReportKind::Csv => {
                put("results.csv", &results_csv(table)?)?;
                put("summary.csv", &summary_csv(table)?)?;
                put("trends.csv", &trends_csv(table)?)?;
            }
            ReportKind::Json => put("results.json", to_json_pretty(table).as_bytes())?,
            ReportKind::Plots => {
                let present: Vec<&str> =
                    PLOT_METRICS.into_iter().filter(|m| table.rows.iter().any(|r| r.metric(m).is_some())).collect();
                for m in PLOT_METRICS.iter().filter(|m| !present.contains(m)) {
                    warnings.push(format!("warning: metric column {m} is empty; omitted from plots"));
                }
                for axis in &table.axes {
                    for m in &present {
                        if let Some(svg) = axis_plot(table, &axis.name, axis.numeric, m) {
                            put(&format!("plot_{}_{m}.svg", axis.name), svg.as_bytes())?;
                        }
                    }
                    if axis.name == "noise_roles" && present.contains(&"si_sdr") {
                        if let Some(svg) = roles_grid(table, "si_sdr") {
                            put("grid_noise_roles_si_sdr.svg", svg.as_bytes())?;
                        }
                    }
                }
                if let Some(svg) = iteration_plot(table) {
                    put("plot_iterations.svg", svg.as_bytes())?;
                }
            }
        }
    }
    for r in table.failed() {
        if let CellStatus::Failed { reason } = &r.status {
            warnings.push(format!("failed cell {} / {} / seed {}: {reason}", r.condition, r.method, r.seed));
        }
    }
    let mut log = warnings.join("\n");
    if !log.is_empty() {
        log.push('\n');
    }
    put(LOG_FILE, log.as_bytes())?;
    Ok(ReportOutput { files, warnings })
}
