//! Quality metrics (PSNR, SSIM), repeated-run statistics (confidence interval
//! of the mean), academic rounding, and the interval-notation results tables.
//!
//! A benchmark produces one sample per run for each (scene, metric) pair; a
//! table cell shows the confidence interval of the mean in a compressed
//! notation where the digits shared by both bounds are written once:
//! lower 25.48, upper 25.54 renders as "25.[48-54]". A degenerate interval
//! renders as the plain rounded value.

use std::fmt::Write as _;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::math::Scalar;
use crate::scene::ImageBuffer;
use crate::ssim::{ssim_plane, SsimError};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("image dimensions differ")]
    DimensionMismatch,
    #[error("image sides must be at least 11 px for SSIM")]
    TooSmall,
    #[error("need at least 2 samples for a confidence interval, got {n}")]
    TooFewSamples { n: usize },
    #[error("sample values must be finite")]
    NonFiniteSample,
    #[error("interval lower bound {lower} exceeds upper bound {upper}")]
    InvalidOrder { lower: String, upper: String },
    #[error("cannot parse {0:?} as a value or interval cell")]
    NotAnInterval(String),
    #[error("results grid is incomplete: {0}")]
    IncompleteGrid(String),
}

impl From<SsimError> for ReportError {
    fn from(e: SsimError) -> Self {
        match e {
            SsimError::TooSmall => ReportError::TooSmall,
            SsimError::DimensionMismatch => ReportError::DimensionMismatch,
        }
    }
}

/// Rounding class of a metric; controls the printed decimal places.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Psnr,
    Ssim,
    TimeSeconds,
    VramGib,
    NumGsThousands,
}

impl MetricKind {
    pub fn decimals(self) -> usize {
        match self {
            MetricKind::Psnr => 2,
            MetricKind::Ssim => 3,
            MetricKind::TimeSeconds => 0,
            MetricKind::VramGib => 2,
            MetricKind::NumGsThousands => 0,
        }
    }
}

/// The fixed results-table rows: (CSV id, display label, rounding class).
pub const RESULT_ROWS: [(&str, &str, MetricKind); 6] = [
    ("psnr", "PSNR", MetricKind::Psnr),
    ("ssim", "SSIM", MetricKind::Ssim),
    ("time_seconds", "Time", MetricKind::TimeSeconds),
    ("vram_total_gib", "Total VRAM", MetricKind::VramGib),
    ("vram_peak_gib", "Peak VRAM", MetricKind::VramGib),
    ("num_gs_thousands", "NumGS", MetricKind::NumGsThousands),
];

const PSNR_CAP_DB: f64 = 100.0;
const PSNR_CAP_MSE: f64 = 1e-10;

/// Mean squared error over all pixels and channels.
pub fn mse<T: Scalar>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64, ReportError> {
    if a.width != b.width || a.height != b.height {
        return Err(ReportError::DimensionMismatch);
    }
    let mut sum = 0.0f64;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            let d = pa[c].to_f64().unwrap() - pb[c].to_f64().unwrap();
            sum += d * d;
        }
    }
    Ok(sum / (a.pixels.len() as f64 * 3.0))
}

/// Peak signal-to-noise ratio in dB for unit dynamic range, capped at 100 dB
/// when the MSE underflows toward zero.
pub fn psnr<T: Scalar>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64, ReportError> {
    let m = mse(a, b)?;
    if m < PSNR_CAP_MSE {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Mean SSIM over the three channels (valid-region windows; see `ssim`).
pub fn ssim<T: Scalar>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64, ReportError> {
    if a.width != b.width || a.height != b.height {
        return Err(ReportError::DimensionMismatch);
    }
    let pa = a.planes();
    let pb = b.planes();
    let mut sum = 0.0f64;
    for c in 0..3 {
        sum += ssim_plane(&pa[c], &pb[c], a.width as usize, a.height as usize)?
            .to_f64()
            .unwrap();
    }
    Ok(sum / 3.0)
}

/// Two-sided confidence interval of the mean at the given level, using the
/// Student t quantile with n-1 degrees of freedom.
pub fn mean_ci(samples: &[f64], level: f64) -> Result<(f64, f64), ReportError> {
    let n = samples.len();
    if n < 2 {
        return Err(ReportError::TooFewSamples { n });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(ReportError::NonFiniteSample);
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("valid t distribution")
        .inverse_cdf((1.0 + level) / 2.0);
    let half = t * var.sqrt() / nf.sqrt();
    Ok((mean - half, mean + half))
}

/// Round to the metric's printed precision, half away from zero, and format
/// with a fixed number of decimals.
pub fn round_metric(value: f64, kind: MetricKind) -> String {
    let d = kind.decimals();
    let scale = 10u64.pow(d as u32);
    let scaled = (value.abs() * scale as f64).round() as u64;
    let whole = scaled / scale;
    let frac = scaled % scale;
    let mut s = String::new();
    if value < 0.0 && scaled != 0 {
        s.push('-');
    }
    let _ = write!(s, "{whole}");
    if d > 0 {
        let _ = write!(s, ".{frac:0d$}");
    }
    s
}

/// Compress two rounded bound strings into interval notation: the longest
/// common prefix once, then "[lower_suffix-upper_suffix]". Equal bounds render
/// as the plain value.
pub fn interval_notation(lower: &str, upper: &str) -> Result<String, ReportError> {
    let lv: f64 = lower
        .parse()
        .map_err(|_| ReportError::NotAnInterval(lower.to_string()))?;
    let uv: f64 = upper
        .parse()
        .map_err(|_| ReportError::NotAnInterval(upper.to_string()))?;
    if lv > uv {
        return Err(ReportError::InvalidOrder {
            lower: lower.to_string(),
            upper: upper.to_string(),
        });
    }
    if lower == upper {
        return Ok(lower.to_string());
    }
    let prefix_len = lower
        .bytes()
        .zip(upper.bytes())
        .take_while(|(a, b)| a == b)
        .count();
    Ok(format!(
        "{}[{}-{}]",
        &lower[..prefix_len],
        &lower[prefix_len..],
        &upper[prefix_len..]
    ))
}

/// Inverse of `interval_notation`: recover the two bound strings from a cell.
/// A plain value yields a degenerate pair. The split point inside the brackets
/// is found by scanning for a '-' that makes both halves parse with
/// lower ≤ upper.
pub fn parse_interval(cell: &str) -> Result<(String, String), ReportError> {
    let bad = || ReportError::NotAnInterval(cell.to_string());
    match cell.find('[') {
        None => {
            cell.parse::<f64>().map_err(|_| bad())?;
            Ok((cell.to_string(), cell.to_string()))
        }
        Some(open) => {
            let prefix = &cell[..open];
            let inner = cell
                .strip_suffix(']')
                .and_then(|c| c.get(open + 1..))
                .ok_or_else(bad)?;
            for (i, ch) in inner.char_indices().skip(1) {
                if ch != '-' {
                    continue;
                }
                let lower = format!("{prefix}{}", &inner[..i]);
                let upper = format!("{prefix}{}", &inner[i + 1..]);
                if let (Ok(lv), Ok(uv)) = (lower.parse::<f64>(), upper.parse::<f64>()) {
                    if lv <= uv {
                        return Ok((lower, upper));
                    }
                }
            }
            Err(bad())
        }
    }
}

/// One rendered cell with its rounded bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalCell {
    pub lower: String,
    pub upper: String,
    pub rendered: String,
}

fn cell_from_samples(
    samples: &[f64],
    kind: MetricKind,
    level: f64,
) -> Result<IntervalCell, ReportError> {
    match samples.len() {
        0 => Err(ReportError::IncompleteGrid("empty sample list".into())),
        1 => {
            let s = round_metric(samples[0], kind);
            Ok(IntervalCell {
                lower: s.clone(),
                upper: s.clone(),
                rendered: s,
            })
        }
        _ => {
            let (lo, hi) = mean_ci(samples, level)?;
            let lower = round_metric(lo, kind);
            let upper = round_metric(hi, kind);
            let rendered = interval_notation(&lower, &upper)?;
            Ok(IntervalCell {
                lower,
                upper,
                rendered,
            })
        }
    }
}

/// Raw benchmark samples: one value per (scene, table row, run).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsGrid {
    pub scenes: Vec<String>,
    /// values[scene][row][run], rows in `RESULT_ROWS` order.
    pub values: Vec<Vec<Vec<f64>>>,
    pub level: f64,
}

#[derive(Debug, Serialize)]
struct BoundsRow {
    metric: String,
    label: String,
    cells: Vec<IntervalCell>,
}

#[derive(Debug, Serialize)]
struct BoundsTable {
    level: f64,
    columns: Vec<String>,
    rows: Vec<BoundsRow>,
}

impl ResultsGrid {
    /// Checks the grid is rectangular; returns the common run count.
    pub fn validate(&self) -> Result<usize, ReportError> {
        if self.scenes.is_empty() {
            return Err(ReportError::IncompleteGrid("no scenes".into()));
        }
        if self.values.len() != self.scenes.len() {
            return Err(ReportError::IncompleteGrid(format!(
                "{} scenes but {} value columns",
                self.scenes.len(),
                self.values.len()
            )));
        }
        let runs = self
            .values
            .first()
            .and_then(|rows| rows.first())
            .map(|r| r.len())
            .unwrap_or(0);
        for (s, rows) in self.values.iter().enumerate() {
            if rows.len() != RESULT_ROWS.len() {
                return Err(ReportError::IncompleteGrid(format!(
                    "scene {:?} has {} metric rows, expected {}",
                    self.scenes[s],
                    rows.len(),
                    RESULT_ROWS.len()
                )));
            }
            for (r, samples) in rows.iter().enumerate() {
                if samples.len() != runs {
                    return Err(ReportError::IncompleteGrid(format!(
                        "scene {:?} metric {:?} has {} runs, expected {}",
                        self.scenes[s],
                        RESULT_ROWS[r].0,
                        samples.len(),
                        runs
                    )));
                }
            }
        }
        if runs == 0 {
            return Err(ReportError::IncompleteGrid("zero runs".into()));
        }
        Ok(runs)
    }

    /// Cells for every table row: one per scene plus the trailing Average
    /// column (per-run mean across scenes, then interval across runs).
    pub fn cells(&self) -> Result<Vec<Vec<IntervalCell>>, ReportError> {
        let runs = self.validate()?;
        let mut out = Vec::with_capacity(RESULT_ROWS.len());
        for (row, &(_, _, kind)) in RESULT_ROWS.iter().enumerate() {
            let mut cells = Vec::with_capacity(self.scenes.len() + 1);
            for rows in &self.values {
                cells.push(cell_from_samples(&rows[row], kind, self.level)?);
            }
            let per_run_means: Vec<f64> = (0..runs)
                .map(|run| {
                    self.values.iter().map(|rows| rows[row][run]).sum::<f64>()
                        / self.scenes.len() as f64
                })
                .collect();
            cells.push(cell_from_samples(&per_run_means, kind, self.level)?);
            out.push(cells);
        }
        Ok(out)
    }

    /// Plain-text table: scene columns then Average, rows in fixed order.
    pub fn render_text(&self) -> Result<String, ReportError> {
        let cells = self.cells()?;
        let mut headers: Vec<String> = vec![String::new()];
        headers.extend(self.scenes.iter().cloned());
        headers.push("Average".to_string());
        let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
        for (row, row_cells) in cells.iter().enumerate() {
            widths[0] = widths[0].max(RESULT_ROWS[row].1.len());
            for (c, cell) in row_cells.iter().enumerate() {
                widths[c + 1] = widths[c + 1].max(cell.rendered.len());
            }
        }
        let mut out = String::new();
        for (c, h) in headers.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{:<width$}", h, width = widths[c]);
        }
        out.push('\n');
        for (row, row_cells) in cells.iter().enumerate() {
            let _ = write!(out, "{:<width$}", RESULT_ROWS[row].1, width = widths[0]);
            for (c, cell) in row_cells.iter().enumerate() {
                let _ = write!(out, "  {:<width$}", cell.rendered, width = widths[c + 1]);
            }
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Machine-readable bounds for every cell, as JSON.
    pub fn bounds_json(&self) -> Result<String, ReportError> {
        let cells = self.cells()?;
        let mut columns = self.scenes.clone();
        columns.push("Average".to_string());
        let table = BoundsTable {
            level: self.level,
            columns,
            rows: RESULT_ROWS
                .iter()
                .zip(cells)
                .map(|(&(id, label, _), cells)| BoundsRow {
                    metric: id.to_string(),
                    label: label.to_string(),
                    cells,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&table).expect("serializable table"))
    }

    /// Raw samples as CSV (`run,scene,metric,value`), run-major.
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let runs = self.validate()?;
        let mut out = String::from("run,scene,metric,value\n");
        for run in 0..runs {
            for (s, scene) in self.scenes.iter().enumerate() {
                for (row, &(id, _, _)) in RESULT_ROWS.iter().enumerate() {
                    let _ = writeln!(out, "{run},{scene},{id},{}", self.values[s][row][run]);
                }
            }
        }
        Ok(out)
    }

    /// Parse the CSV produced by `to_csv`. Scene order follows first
    /// appearance; the grid must come back rectangular.
    pub fn from_csv(text: &str, level: f64) -> Result<Self, ReportError> {
        let mut lines = text.lines();
        match lines.next() {
            Some("run,scene,metric,value") => {}
            other => {
                return Err(ReportError::IncompleteGrid(format!(
                    "bad CSV header: {other:?}"
                )))
            }
        }
        let mut scenes: Vec<String> = Vec::new();
        // triples[scene][row] -> (run, value)
        let mut triples: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(4, ',');
            let bad = |what: &str| {
                ReportError::IncompleteGrid(format!("line {}: {what}: {line:?}", lineno + 2))
            };
            let run: usize = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| bad("bad run id"))?;
            let scene = parts.next().ok_or_else(|| bad("missing scene"))?;
            let metric = parts.next().ok_or_else(|| bad("missing metric"))?;
            let value: f64 = parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| bad("bad value"))?;
            let row = RESULT_ROWS
                .iter()
                .position(|&(id, _, _)| id == metric)
                .ok_or_else(|| bad("unknown metric"))?;
            let s = match scenes.iter().position(|s| s == scene) {
                Some(s) => s,
                None => {
                    scenes.push(scene.to_string());
                    triples.push(vec![Vec::new(); RESULT_ROWS.len()]);
                    scenes.len() - 1
                }
            };
            triples[s][row].push((run, value));
        }
        let mut values = Vec::with_capacity(scenes.len());
        for (s, rows) in triples.into_iter().enumerate() {
            let mut scene_rows = Vec::with_capacity(RESULT_ROWS.len());
            for (row, mut samples) in rows.into_iter().enumerate() {
                samples.sort_by_key(|&(run, _)| run);
                for (k, &(run, _)) in samples.iter().enumerate() {
                    if run != k {
                        return Err(ReportError::IncompleteGrid(format!(
                            "scene {:?} metric {:?}: run ids not contiguous",
                            scenes[s], RESULT_ROWS[row].0
                        )));
                    }
                }
                scene_rows.push(samples.into_iter().map(|(_, v)| v).collect());
            }
            values.push(scene_rows);
        }
        let grid = ResultsGrid {
            scenes,
            values,
            level,
        };
        grid.validate()?;
        Ok(grid)
    }
}
