//! Output files: `similarity.csv`, `trend.svg`, `report.json`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use corpus_drift_core::saturation::{SaturationModel, SaturationYear};
use corpus_drift_core::similarity::{CohortDiversityStat, CohortSimilarityStat, Covariance};
use serde::{Deserialize, Serialize};

use crate::analyze::SkippedCohort;
use crate::ingest::IngestCounters;

pub const CSV_HEADER: &str = "year,cosine similarity";
pub const CURVE_SAMPLES: usize = 200;
pub const DEFAULT_HORIZON_YEARS: f64 = 35.0;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no similarity stats to write")]
    Empty,
    #[error("plot needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("years must be strictly ascending ({prev} then {next})")]
    YearsNotAscending { prev: i32, next: i32 },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

fn check_ascending<I: IntoIterator<Item = i32>>(years: I) -> Result<(), ReportError> {
    let mut prev: Option<i32> = None;
    for next in years {
        if let Some(prev) = prev {
            if next <= prev {
                return Err(ReportError::YearsNotAscending { prev, next });
            }
        }
        prev = Some(next);
    }
    Ok(())
}

pub fn similarity_csv(stats: &[CohortSimilarityStat]) -> Result<String, ReportError> {
    if stats.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut sorted: Vec<&CohortSimilarityStat> = stats.iter().collect();
    sorted.sort_by_key(|s| s.year);
    check_ascending(sorted.iter().map(|s| s.year))?;
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in sorted {
        writeln!(out, "{},{:.6}", s.year, s.mean_similarity).expect("write to String");
    }
    Ok(out)
}

/// Rows ascending by year. Nothing is written if `stats` is empty.
pub fn write_similarity_csv(stats: &[CohortSimilarityStat], path: &Path) -> Result<(), ReportError> {
    let body = similarity_csv(stats)?;
    fs::write(path, body).map_err(io_error(path))
}

pub fn read_similarity_csv(path: &Path) -> Result<Vec<(i32, f64)>, ReportError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let parse = |line: usize, reason: String| ReportError::Parse { path: path.to_path_buf(), line, reason };
    let mut lines = text.lines();
    match lines.next() {
        Some(CSV_HEADER) => {}
        other => return Err(parse(1, format!("expected header {CSV_HEADER:?}, found {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (year, q) = line.split_once(',').ok_or_else(|| parse(i + 2, "expected 2 columns".into()))?;
            let year = year.parse().map_err(|_| parse(i + 2, format!("bad year {year:?}")))?;
            let q = q.parse().map_err(|_| parse(i + 2, format!("bad value {q:?}")))?;
            Ok((year, q))
        })
        .collect()
}

/// `(year, h(year))` at `CURVE_SAMPLES` evenly spaced years over `[from, to]`.
pub fn curve_samples(model: &SaturationModel, from: f64, to: f64) -> Vec<(f64, f64)> {
    let step = (to - from) / (CURVE_SAMPLES - 1) as f64;
    (0..CURVE_SAMPLES)
        .map(|i| {
            let y = if i == CURVE_SAMPLES - 1 { to } else { from + step * i as f64 };
            (y, model.eval(y))
        })
        .collect()
}

pub fn model_formula(model: &SaturationModel) -> String {
    format!("h(y) = {:.4} + {:.4}·(1 − e^(−{:.4}·(y − {})))", model.h0, model.a, model.b, model.y0)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

/// Observed points plus the fitted curve out to `max year + horizon`.
pub fn plot_svg(points: &[(i32, f64)], model: &SaturationModel, horizon: f64) -> Result<String, ReportError> {
    if points.len() < 2 {
        return Err(ReportError::TooFewPoints(points.len()));
    }
    check_ascending(points.iter().map(|p| p.0))?;
    let x_min = f64::from(points[0].0);
    let x_max = f64::from(points[points.len() - 1].0) + horizon.max(0.0);
    let curve = curve_samples(model, x_min, x_max);
    let values = points.iter().map(|p| p.1).chain(curve.iter().map(|c| c.1));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = ((hi - lo) * 0.08).max(1e-3);
    let frame = Frame { x0: x_min, x1: x_max, y0: lo - pad, y1: hi + pad };

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (bx, by) = (HEIGHT - BOTTOM, WIDTH - RIGHT);
    let _ = writeln!(w, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(w, r#"<line x1="{LEFT}" y1="{bx}" x2="{by}" y2="{bx}"/>"#);
    let _ = writeln!(w, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bx}"/>"#);
    let _ = writeln!(w, "</g>");

    let _ = writeln!(w, r#"<g class="ticks" text-anchor="middle">"#);
    let xstep = nice_step(x_max - x_min, 8).max(1.0);
    let mut t = (x_min / xstep).ceil() * xstep;
    while t <= x_max + 1e-9 {
        let x = frame.px(t);
        let _ = writeln!(w, r#"<line x1="{x:.2}" y1="{bx}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, bx + 5.0);
        let _ = writeln!(w, r#"<text x="{x:.2}" y="{:.2}">{t:.0}</text>"#, bx + 20.0);
        t += xstep;
    }
    let ystep = nice_step(frame.y1 - frame.y0, 6);
    let decimals = (-ystep.log10().floor()).max(0.0) as usize;
    let mut t = (frame.y0 / ystep).ceil() * ystep;
    while t <= frame.y1 + 1e-12 {
        let y = frame.py(t);
        let _ = writeln!(w, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ =
            writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.decimals$}</text>"#, LEFT - 8.0, y + 4.0);
        t += ystep;
    }
    let _ = writeln!(w, "</g>");

    let _ = writeln!(
        w,
        r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="middle">Year</text>"#,
        (LEFT + by) / 2.0,
        HEIGHT - 15.0
    );
    let (cx, cy) = (20.0, (TOP + bx) / 2.0);
    let _ = writeln!(
        w,
        r#"<text class="ylabel" x="{cx}" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 {cx} {cy:.2})">Average Cosine Similarity</text>"#
    );

    let mut d = String::new();
    for (i, (x, y)) in curve.iter().enumerate() {
        let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, frame.px(*x), frame.py(*y));
    }
    let _ = writeln!(w, r##"<path class="fit" d="{d}" fill="none" stroke="#d62728" stroke-width="2"/>"##);

    let _ = writeln!(w, r##"<g class="observations" fill="#1f77b4">"##);
    for (year, q) in points {
        let _ = writeln!(
            w,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4"><title>{year}: {q:.6}</title></circle>"#,
            frame.px(f64::from(*year)),
            frame.py(*q)
        );
    }
    let _ = writeln!(w, "</g>");

    let (lx, ly) = (LEFT + 20.0, TOP + 10.0);
    let _ = writeln!(w, r#"<g class="legend">"#);
    let _ = writeln!(w, r##"<circle cx="{lx}" cy="{ly}" r="4" fill="#1f77b4"/>"##);
    let _ = writeln!(w, r#"<text x="{}" y="{}">observed</text>"#, lx + 12.0, ly + 4.0);
    let _ = writeln!(
        w,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#d62728" stroke-width="2"/>"##,
        lx - 6.0,
        ly + 20.0,
        lx + 6.0,
        ly + 20.0
    );
    let _ = writeln!(w, r#"<text x="{}" y="{}">{}</text>"#, lx + 12.0, ly + 24.0, escape(&model_formula(model)));
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

pub fn render_plot_svg(
    points: &[(i32, f64)],
    model: &SaturationModel,
    horizon: f64,
    path: &Path,
) -> Result<(), ReportError> {
    let svg = plot_svg(points, model, horizon)?;
    fs::write(path, svg).map_err(io_error(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySummary {
    pub year: i32,
    pub n: usize,
    pub trace: f64,
    pub top_eigenvalues: Vec<f64>,
}

impl From<&CohortDiversityStat> for DiversitySummary {
    fn from(d: &CohortDiversityStat) -> Self {
        let top_eigenvalues = match &d.covariance {
            Covariance::Summary { top_eigenvalues, .. } => top_eigenvalues.clone(),
            Covariance::Full(_) => Vec::new(),
        };
        Self { year: d.year, n: d.n, trace: d.trace, top_eigenvalues }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSection {
    pub model: Option<SaturationModel>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub model_tag: Option<String>,
    pub dimension: Option<usize>,
    pub skipped_cohorts: Vec<SkippedCohort>,
    pub negative_years: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub ingest: Option<IngestCounters>,
    pub similarity: Vec<CohortSimilarityStat>,
    pub diversity: Vec<DiversitySummary>,
    pub fit: FitSection,
    pub saturation: Vec<SaturationYear>,
    pub meta: Meta,
}

impl RunReport {
    pub fn validate(&self) -> Result<(), ReportError> {
        check_ascending(self.similarity.iter().map(|s| s.year))?;
        check_ascending(self.diversity.iter().map(|d| d.year))
    }
}

pub fn write_report_json(report: &RunReport, path: &Path) -> Result<(), ReportError> {
    report.validate()?;
    let mut body = serde_json::to_string_pretty(report)?;
    body.push('\n');
    fs::write(path, body).map_err(io_error(path))
}
