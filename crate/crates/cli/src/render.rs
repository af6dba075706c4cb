//! Raster panels and simple plots.

use gridcast::featurize::{LIDAR_CHANNELS, RADAR_CHANNELS};
use gridcast::grid::{label_image, LabelGrid};
use gridcast::model::data::featurize_sample;
use gridcast::model::{FeatureConfig, Modality};
use gridcast::sim::{Sample, NUM_PAST};
use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};

const GAP: u32 = 4;
const TILE: u32 = 128;

/// One sample at a glance.
///
/// Top row: lidar and radar occupancy of the past frames in the t₀ frame
/// (brighter is more recent), then each camera's t₀ image. Second row: the
/// labels at the five horizons. Then one row per prediction in `rows`.
/// Forward points up in every top-down tile.
pub fn panel(sample: &Sample, rows: &[Vec<LabelGrid>]) -> RgbImage {
    let spec = sample.labels.spec();
    let scale = (TILE / spec.rows_x.max(spec.cols_y) as u32).max(1);
    let (tw, th) = (spec.cols_y as u32 * scale, spec.rows_x as u32 * scale);

    let mut top: Vec<RgbImage> = Vec::new();
    for (m, k) in [(Modality::Lidar, LIDAR_CHANNELS), (Modality::Radar, RADAR_CHANNELS)] {
        if let Ok((_, data)) = featurize_sample(sample, m, &FeatureConfig::default()) {
            top.push(upscale(&occupancy_tile(&data, k, spec.rows_x, spec.cols_y), scale));
        }
    }
    for frames in &sample.inputs.images {
        if let Some(f) = frames.last() {
            let img = f.to_image();
            let w = (img.width() * th / img.height().max(1)).max(1);
            top.push(imageops::resize(&img, w, th, FilterType::Nearest));
        }
    }
    let mut grid_rows: Vec<Vec<RgbImage>> = vec![top];
    grid_rows.push(sample.labels.labels().iter().map(|l| upscale(&label_image(l), scale)).collect());
    for r in rows {
        grid_rows.push(r.iter().map(|l| upscale(&label_image(l), scale)).collect());
    }

    let width = grid_rows
        .iter()
        .map(|r| r.iter().map(|t| t.width() + GAP).sum::<u32>() + GAP)
        .max()
        .unwrap_or(GAP)
        .max(tw);
    let height = grid_rows.iter().map(|r| r.iter().map(RgbImage::height).max().unwrap_or(0) + GAP).sum::<u32>() + GAP;
    let mut out = RgbImage::from_pixel(width, height, Rgb([40, 40, 40]));
    let mut y = GAP;
    for r in &grid_rows {
        let mut x = GAP;
        for tile in r {
            imageops::replace(&mut out, tile, x as i64, y as i64);
            x += tile.width() + GAP;
        }
        y += r.iter().map(RgbImage::height).max().unwrap_or(0) + GAP;
    }
    out
}

fn upscale(img: &RgbImage, scale: u32) -> RgbImage {
    imageops::resize(img, img.width() * scale, img.height() * scale, FilterType::Nearest)
}

/// Occupancy channel (feature 0) of each past frame, newest drawn last.
fn occupancy_tile(features: &[f32], per_frame: usize, rows: usize, cols: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(cols as u32, rows as u32, Rgb([0, 0, 0]));
    let cells = rows * cols;
    for t in 0..NUM_PAST {
        let level = (80 + 175 * t / (NUM_PAST - 1)) as u8;
        let plane = &features[t * per_frame * cells..][..cells];
        for (i, &v) in plane.iter().enumerate() {
            if v > 0.0 {
                let (row, col) = (i / cols, i % cols);
                img.put_pixel((cols - 1 - col) as u32, (rows - 1 - row) as u32, Rgb([level, level, level]));
            }
        }
    }
    img
}

/// Loss against step on a log-scaled y axis spanning the observed range.
pub fn loss_plot(losses: &[f64]) -> RgbImage {
    let finite: Vec<f64> = losses.iter().copied().filter(|v| v.is_finite() && *v > 0.0).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_max = losses.len().saturating_sub(1).max(1) as f64;
    let line: Vec<(f64, Option<f64>)> = losses
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as f64, (v.is_finite() && v > 0.0).then(|| (v.ln() - lo) / span)))
        .collect();
    gridcast::metrics::line_plot(&[line], x_max)
}
