//! One-vs-all segmentation metrics per class and horizon.
//!
//! Counts are summed over cells and samples before any ratio is taken
//! (micro-averaging). A ratio whose denominator is zero is reported as
//! `None` and written as an empty CSV field.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{LabelGrid, SemClass, HORIZONS, NUM_CLASSES, NUM_HORIZONS};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("failed to write plot: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// 1-vs-all counts indexed `[horizon][class]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub counts: [[Counts; NUM_CLASSES]; NUM_HORIZONS],
}

impl ConfusionCounts {
    pub fn get(&self, horizon: usize, class: SemClass) -> Counts {
        self.counts[horizon][class.index()]
    }

    /// Adds another set of counts (e.g. another sample).
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add(y);
            }
        }
    }

    pub fn metric(&self, metric: Metric, horizon: usize, class: SemClass) -> Option<f64> {
        metric.of(&self.get(horizon, class))
    }
}

/// Counts for one sample: predicted and true labels at every horizon.
pub fn confusion(pred: &[LabelGrid], truth: &[LabelGrid]) -> Result<ConfusionCounts, MetricsError> {
    if pred.len() != NUM_HORIZONS || truth.len() != NUM_HORIZONS {
        return Err(MetricsError::Shape(format!(
            "expected {NUM_HORIZONS} horizons, got {} predicted and {} true",
            pred.len(),
            truth.len()
        )));
    }
    let mut out = ConfusionCounts::default();
    for (h, (p, t)) in pred.iter().zip(truth).enumerate() {
        if (p.rows, p.cols) != (t.rows, t.cols) {
            return Err(MetricsError::Shape(format!("horizon {h}: {}x{} vs {}x{}", p.rows, p.cols, t.rows, t.cols)));
        }
        let counts = &mut out.counts[h];
        for (&pc, &tc) in p.labels.iter().zip(&t.labels) {
            if pc == tc {
                counts[pc.index()].tp += 1;
            } else {
                counts[pc.index()].fp += 1;
                counts[tc.index()].fn_ += 1;
            }
        }
        let cells = p.labels.len() as u64;
        for c in counts.iter_mut() {
            c.tn = cells - c.tp - c.fp - c.fn_;
        }
    }
    Ok(out)
}

/// Sums per-sample counts over a whole set.
pub fn accumulate<'a>(pairs: impl IntoIterator<Item = (&'a [LabelGrid], &'a [LabelGrid])>) -> Result<ConfusionCounts, MetricsError> {
    let mut total = ConfusionCounts::default();
    for (p, t) in pairs {
        total.merge(&confusion(p, t)?);
    }
    Ok(total)
}

/// The persistence baseline: the t₀ labels repeated at every horizon.
pub fn persistence(truth: &[LabelGrid]) -> Vec<LabelGrid> {
    vec![truth[0].clone(); truth.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    Iou,
    Accuracy,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Precision, Metric::Recall, Metric::Iou, Metric::Accuracy];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::Iou => "iou",
            Metric::Accuracy => "accuracy",
        }
    }

    pub fn of(self, c: &Counts) -> Option<f64> {
        let (num, den) = match self {
            Metric::Precision => (c.tp, c.tp + c.fp),
            Metric::Recall => (c.tp, c.tp + c.fn_),
            Metric::Iou => (c.tp, c.tp + c.fp + c.fn_),
            Metric::Accuracy => (c.tp + c.tn, c.total()),
        };
        (den > 0).then(|| num as f64 / den as f64)
    }
}

pub fn precision(c: &Counts) -> Option<f64> {
    Metric::Precision.of(c)
}

pub fn recall(c: &Counts) -> Option<f64> {
    Metric::Recall.of(c)
}

pub fn iou(c: &Counts) -> Option<f64> {
    Metric::Iou.of(c)
}

pub fn accuracy(c: &Counts) -> Option<f64> {
    Metric::Accuracy.of(c)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Class × metric table at one horizon with one column per series
/// (modalities, then fusion rules).
///
/// Header: `class,metric,<series>...`; one row per class and metric.
pub fn table_csv(series: &[(String, ConfusionCounts)], horizon: usize) -> String {
    let mut out = String::from("class,metric");
    for (name, _) in series {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for class in SemClass::ALL {
        for metric in Metric::ALL {
            let _ = write!(out, "{},{}", class.name(), metric.name());
            for (_, counts) in series {
                out.push(',');
                out.push_str(&fmt_value(counts.metric(metric, horizon, class)));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub metric: Metric,
    pub class: SemClass,
    pub horizon_s: f64,
    pub value: Option<f64>,
}

/// Every metric for every class and horizon, per series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HorizonCurves {
    pub points: Vec<CurvePoint>,
}

pub fn horizon_curves(series: &[(String, ConfusionCounts)]) -> HorizonCurves {
    let mut points = Vec::new();
    for (name, counts) in series {
        for metric in Metric::ALL {
            for class in SemClass::ALL {
                for (h, &t) in HORIZONS.iter().enumerate() {
                    points.push(CurvePoint {
                        series: name.clone(),
                        metric,
                        class,
                        horizon_s: t,
                        value: counts.metric(metric, h, class),
                    });
                }
            }
        }
    }
    HorizonCurves { points }
}

pub const CURVES_HEADER: &str = "series,metric,class,horizon_s,value";

impl HorizonCurves {
    /// CSV with header [`CURVES_HEADER`].
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CURVES_HEADER}\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{},{}", p.series, p.metric.name(), p.class.name(), p.horizon_s, fmt_value(p.value));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CURVES_HEADER) {
            return Err(MetricsError::Shape(format!("curve table must start with {CURVES_HEADER:?}")));
        }
        let bad = |line: &str| MetricsError::Shape(format!("bad curve row {line:?}"));
        let mut points = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            let metric = *Metric::ALL.iter().find(|m| m.name() == f[1]).ok_or_else(|| bad(line))?;
            let class = *SemClass::ALL.iter().find(|c| c.name() == f[2]).ok_or_else(|| bad(line))?;
            let horizon_s = f[3].parse().map_err(|_| bad(line))?;
            let value = if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|_| bad(line))?) };
            points.push(CurvePoint {
                series: f[0].to_string(),
                metric,
                class,
                horizon_s,
                value,
            });
        }
        Ok(Self { points })
    }

    pub fn series(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in &self.points {
            if !names.contains(&p.series) {
                names.push(p.series.clone());
            }
        }
        names
    }

    /// Values over the horizons for one series, metric and class.
    pub fn curve(&self, series: &str, metric: Metric, class: SemClass) -> Vec<(f64, Option<f64>)> {
        self.points
            .iter()
            .filter(|p| p.series == series && p.metric == metric && p.class == class)
            .map(|p| (p.horizon_s, p.value))
            .collect()
    }

    /// Writes `<metric>_<class>.png` for every metric and class, one line
    /// per series. Returns the written paths.
    pub fn write_plots(&self, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
        std::fs::create_dir_all(dir)?;
        let series = self.series();
        let mut paths = Vec::new();
        for metric in Metric::ALL {
            for class in SemClass::ALL {
                let lines: Vec<Vec<(f64, Option<f64>)>> = series.iter().map(|s| self.curve(s, metric, class)).collect();
                let path = dir.join(format!("{}_{}.png", metric.name(), class.name()));
                line_plot(&lines, HORIZONS[NUM_HORIZONS - 1]).save_with_format(&path, image::ImageFormat::Png)?;
                paths.push(path);
            }
        }
        Ok(paths)
    }
}

/// Series colours, in series order.
pub const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

const W: u32 = 400;
const H: u32 = 300;
const MARGIN: u32 = 30;

/// A bare line chart: x in [0, x_max], y in [0, 1], light grid lines every
/// 0.5 in x and 0.25 in y, a colour swatch per series in the top-left corner.
/// Absent values break the line.
pub fn line_plot(lines: &[Vec<(f64, Option<f64>)>], x_max: f64) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let (pw, ph) = ((W - 2 * MARGIN) as f64, (H - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| (MARGIN as f64 + x / x_max * pw, (H - MARGIN) as f64 - y.clamp(0.0, 1.0) * ph);
    let grey = Rgb([220, 220, 220]);
    for k in 0..=4 {
        let (_, y) = to_px(0.0, k as f64 / 4.0);
        draw_line(&mut img, (MARGIN as f64, y), ((W - MARGIN) as f64, y), grey);
    }
    let mut x = 0.0;
    while x <= x_max + 1e-9 {
        let (px, _) = to_px(x, 0.0);
        draw_line(&mut img, (px, MARGIN as f64), (px, (H - MARGIN) as f64), grey);
        x += 0.5;
    }
    let black = Rgb([0, 0, 0]);
    draw_line(&mut img, to_px(0.0, 0.0), to_px(x_max, 0.0), black);
    draw_line(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), black);
    for (i, line) in lines.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        for w in line.windows(2) {
            if let ((x0, Some(y0)), (x1, Some(y1))) = (w[0], w[1]) {
                draw_line(&mut img, to_px(x0, y0), to_px(x1, y1), color);
            }
        }
        for &(x, y) in line {
            if let Some(y) = y {
                let (px, py) = to_px(x, y);
                fill_rect(&mut img, px as i64 - 2, py as i64 - 2, 5, color);
            }
        }
        fill_rect(&mut img, 4 + 12 * i as i64, 4, 8, color);
    }
    img
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, size: i64, color: Rgb<u8>) {
    for dy in 0..size {
        for dx in 0..size {
            put(img, x + dx, y + dy, color);
        }
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put(img, (x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64, color);
    }
}
