//! Run reports and their CSV / SVG renderings.

use std::fmt::Write as _;
use std::path::Path;

use accel_attn::integrators::Trajectory;

pub const CSV_HEADER: &str = "t,H,H_tilde,energy,momentum_norm,oracle_calls";

/// One recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: f64,
    pub hamiltonian: Option<f64>,
    pub time_dep_hamiltonian: Option<f64>,
    pub energy: f64,
    pub momentum_norm: f64,
    pub oracle_calls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub rows: Vec<Row>,
}

impl Series {
    pub fn from_trajectory(label: impl Into<String>, traj: &Trajectory) -> Self {
        Self {
            label: label.into(),
            rows: traj
                .snapshots
                .iter()
                .map(|s| Row {
                    t: s.ensemble.t,
                    hamiltonian: s.diagnostics.hamiltonian,
                    time_dep_hamiltonian: s.diagnostics.time_dep_hamiltonian,
                    energy: s.diagnostics.energy,
                    momentum_norm: s.diagnostics.momentum_norm,
                    oracle_calls: s.diagnostics.oracle_calls,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub final_energy: f64,
    pub min_energy: f64,
    pub total_oracle_calls: u64,
    pub wall_time_s: f64,
}

impl Summary {
    pub fn of(series: &[Series], wall_time_s: f64) -> Self {
        let energies = series.iter().flat_map(|s| s.rows.iter().map(|r| r.energy));
        let min_energy = energies.fold(f64::INFINITY, f64::min);
        let final_energy = series
            .first()
            .and_then(|s| s.rows.last())
            .map_or(f64::NAN, |r| r.energy);
        let total_oracle_calls = series
            .iter()
            .filter_map(|s| s.rows.last())
            .map(|r| r.oracle_calls)
            .sum();
        Self {
            final_energy,
            min_energy,
            total_oracle_calls,
            wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    /// The run produced output but a check or the dynamics failed.
    Failed(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub series: Vec<Series>,
    pub summary: Summary,
    pub status: Status,
    /// Human-readable findings, one per line.
    pub notes: Vec<String>,
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn series_to_csv(series: &Series) -> String {
    let mut out = String::with_capacity(64 * (series.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &series.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_float(r.t),
            fmt_opt(r.hamiltonian),
            fmt_opt(r.time_dep_hamiltonian),
            fmt_float(r.energy),
            fmt_float(r.momentum_norm),
            r.oracle_calls
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for CsvError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for CsvError {}

/// Parses the output of [`series_to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<Row>, CsvError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(CsvError {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = |message: String| CsvError { line: i + 1, message };
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", fields.len())));
            }
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { real(s).map(Some) };
            Ok(Row {
                t: real(fields[0])?,
                hamiltonian: opt(fields[1])?,
                time_dep_hamiltonian: opt(fields[2])?,
                energy: real(fields[3])?,
                momentum_norm: real(fields[4])?,
                oracle_calls: fields[5]
                    .parse()
                    .map_err(|_| bad(format!("bad count `{}`", fields[5])))?,
            })
        })
        .collect()
}

pub fn write_csv(series: &Series, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, series_to_csv(series))
}

/// A named polyline for [`line_chart`].
pub struct Curve<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Renders curves as an SVG line chart with axes and a legend.
///
/// With `log_y`, values are plotted as `log10 |y|`; zero values are dropped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, curves: &[Curve<'_>], log_y: bool) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const L: f64 = 80.0;
    const R: f64 = 180.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    let transform = |y: f64| if log_y { y.abs().log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|c| {
            c.points
                .iter()
                .map(|&(x, y)| (x, transform(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        let pad = y0.abs().max(1.0) * 0.05;
        y0 -= pad;
        y1 += pad;
    }
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (L + W - R) / 2.0,
        escape(title)
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M {L} {T} L {L} {} L {} {}" fill="none" stroke="black"/>"#,
        H - B,
        W - R,
        H - B
    );
    for x in ticks(x0, x1, 5) {
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black"/><text x="{0:.2}" y="{3}" text-anchor="middle">{4:.3}</text>"#,
            px(x),
            H - B,
            H - B + 5.0,
            H - B + 20.0,
            x
        );
    }
    for y in ticks(y0, y1, 5) {
        let label = if log_y { format!("1e{y:.2}") } else { format!("{y:.4}") };
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="black"/><text x="{3}" y="{4:.2}" text-anchor="end">{5}</text>"#,
            L - 5.0,
            py(y),
            L,
            L - 8.0,
            py(y) + 4.0,
            label
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (L + W - R) / 2.0,
        H - 15.0,
        escape(x_label)
    );
    let y_text = if log_y { format!("{y_label} (log10 |.|)") } else { y_label.to_string() };
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (T + H - B) / 2.0,
        escape(&y_text)
    );
    for (i, (curve, p)) in curves.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !p.is_empty() {
            let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.join(" ")
            );
        }
        let ly = T + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"/><text x="{3}" y="{4}">{5}</text>"#,
            W - R + 15.0,
            ly,
            W - R + 40.0,
            W - R + 45.0,
            ly + 4.0,
            escape(curve.label)
        );
    }
    s.push_str("</svg>\n");
    s
}
