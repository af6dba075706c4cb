//! Per-modality network inputs built from raw sensor frames.
//!
//! All feature tensors are channel-planar, `[channel][row][col]`, over the
//! grid of a [`GridSpec`] in the ego-at-t₀ frame. Channels are stacked
//! timestep-major, oldest frame first: channel `t·K + k` holds feature `k` of
//! frame `t`.
//!
//! Lidar, per frame (`K = 8`):
//!
//! | k | feature |
//! |---|---------|
//! | 0 | occupancy (1 iff the cell holds a point) |
//! | 1 | density `ln(1+n) / ln(1+n_cap)`, clamped to 1 |
//! | 2 | max z |
//! | 3–7 | max z within the slices [0, 0.5), [0.5, 1), …, [2, 2.5) m |
//!
//! Radar, per frame (`K = 6`): occupancy, compensated velocity x and y (m/s),
//! normalized RCS, normalized SNR, normalized Doppler interval. When several
//! returns share a cell the one with the largest SNR is kept.
//!
//! Empty cells and empty slices read 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{compensate_doppler, Point3, Pose2};
use crate::grid::GridSpec;
use crate::sim::{RadarReturn, RgbFrame, NUM_PAST};

pub const LIDAR_CHANNELS: usize = 8;
pub const RADAR_CHANNELS: usize = 6;
pub const LIDAR_INPUT_CHANNELS: usize = LIDAR_CHANNELS * NUM_PAST;
pub const RADAR_INPUT_CHANNELS: usize = RADAR_CHANNELS * NUM_PAST;
pub const NUM_SLICES: usize = 5;
pub const SLICE_HEIGHT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarFeatureConfig {
    /// Point count at which density saturates.
    pub density_cap: u32,
}

impl Default for LidarFeatureConfig {
    fn default() -> Self {
        Self { density_cap: 64 }
    }
}

/// Min-max normalization constants for radar attributes. Values outside the
/// range are clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarNorm {
    pub rcs_min: f64,
    pub rcs_max: f64,
    pub snr_min: f64,
    pub snr_max: f64,
    pub doppler_interval_max: f64,
}

impl Default for RadarNorm {
    fn default() -> Self {
        Self {
            rcs_min: -10.0,
            rcs_max: 20.0,
            snr_min: 0.0,
            snr_max: 200.0,
            doppler_interval_max: 40.0,
        }
    }
}

impl RadarNorm {
    fn scale(v: f64, lo: f64, hi: f64) -> f32 {
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0) as f32
        } else {
            0.0
        }
    }
}

/// A channel-planar feature stack.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    fn zeros(channels: usize, spec: &GridSpec) -> Self {
        Self {
            channels,
            rows: spec.rows_x,
            cols: spec.cols_y,
            data: vec![0.0; channels * spec.num_cells()],
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.rows + row) * self.cols + col]
    }

    fn at(&mut self, channel: usize, row: usize, col: usize) -> &mut f32 {
        &mut self.data[(channel * self.rows + row) * self.cols + col]
    }
}

/// `points[t]` are world-frame points of past frame `t`; `ego_poses[t]` the
/// ego world pose at that frame, the last one being t₀.
pub fn featurize_lidar(
    points: &[Vec<Point3>],
    ego_poses: &[Pose2],
    spec: &GridSpec,
    cfg: &LidarFeatureConfig,
) -> Result<FeatureGrid, FeatureError> {
    check_frames("lidar", points.len(), ego_poses.len())?;
    let world_to_t0 = ego_poses[ego_poses.len() - 1].inverse();
    let mut out = FeatureGrid::zeros(LIDAR_CHANNELS * points.len(), spec);
    let cap = cfg.density_cap.max(1);
    let mut counts = vec![0u32; spec.num_cells()];
    for (t, frame) in points.iter().enumerate() {
        counts.fill(0);
        let base = t * LIDAR_CHANNELS;
        for p in frame {
            let (x, y) = world_to_t0.transform_xy((p.x, p.y));
            let Some((r, c)) = spec.cell_of((x, y)) else { continue };
            counts[r * spec.cols_y + c] += 1;
            let z = p.z as f32;
            let max_z = out.at(base + 2, r, c);
            *max_z = max_z.max(z);
            if p.z >= 0.0 && p.z < SLICE_HEIGHT * NUM_SLICES as f64 {
                let s = ((p.z / SLICE_HEIGHT) as usize).min(NUM_SLICES - 1);
                let slot = out.at(base + 3 + s, r, c);
                *slot = slot.max(z);
            }
        }
        for (i, &n) in counts.iter().enumerate() {
            if n > 0 {
                let (r, c) = (i / spec.cols_y, i % spec.cols_y);
                *out.at(base, r, c) = 1.0;
                *out.at(base + 1, r, c) = density(n, cap);
            }
        }
    }
    Ok(out)
}

pub fn density(n: u32, cap: u32) -> f32 {
    ((1.0 + n as f64).ln() / (1.0 + cap as f64).ln()).min(1.0) as f32
}

/// `returns[t]` are in the ego frame at past frame `t`; `ego_velocities[t]`
/// is the ego velocity in that same frame.
pub fn featurize_radar(
    returns: &[Vec<RadarReturn>],
    ego_poses: &[Pose2],
    ego_velocities: &[(f64, f64)],
    spec: &GridSpec,
    norm: &RadarNorm,
) -> Result<FeatureGrid, FeatureError> {
    check_frames("radar", returns.len(), ego_poses.len())?;
    check_frames("radar velocity", returns.len(), ego_velocities.len())?;
    let t0_inv = ego_poses[ego_poses.len() - 1].inverse();
    let mut out = FeatureGrid::zeros(RADAR_CHANNELS * returns.len(), spec);
    // Per-cell winner: (snr, vx, vy, rcs, interval).
    let mut best: Vec<Option<[f64; 5]>> = vec![None; spec.num_cells()];
    for (t, frame) in returns.iter().enumerate() {
        best.fill(None);
        let to_t0 = t0_inv.compose(&ego_poses[t]);
        for ret in frame {
            let Some((r, c)) = spec.cell_of(to_t0.transform_xy(ret.position)) else { continue };
            let local = compensate_doppler(ret.radial_velocity, ret.azimuth, ego_velocities[t]);
            let (vx, vy) = to_t0.rotate_vec(local);
            let cand = [ret.snr, vx, vy, ret.rcs, ret.doppler_interval];
            let slot = &mut best[r * spec.cols_y + c];
            // Lexicographic comparison keeps the reduction order-independent.
            let wins = match slot {
                None => true,
                Some(cur) => cand.iter().zip(cur.iter()).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Greater),
            };
            if wins {
                *slot = Some(cand);
            }
        }
        let base = t * RADAR_CHANNELS;
        for (i, b) in best.iter().enumerate() {
            let Some([snr, vx, vy, rcs, interval]) = *b else { continue };
            let (r, c) = (i / spec.cols_y, i % spec.cols_y);
            *out.at(base, r, c) = 1.0;
            *out.at(base + 1, r, c) = vx as f32;
            *out.at(base + 2, r, c) = vy as f32;
            *out.at(base + 3, r, c) = RadarNorm::scale(rcs, norm.rcs_min, norm.rcs_max);
            *out.at(base + 4, r, c) = RadarNorm::scale(snr, norm.snr_min, norm.snr_max);
            *out.at(base + 5, r, c) = RadarNorm::scale(interval, 0.0, norm.doppler_interval_max);
        }
    }
    Ok(out)
}

fn check_frames(what: &str, frames: usize, poses: usize) -> Result<(), FeatureError> {
    if frames == 0 || frames != poses {
        return Err(FeatureError::Dimension(format!("{what}: {frames} frames but {poses} poses")));
    }
    Ok(())
}

/// Camera image stacks scaled to [0, 1].
///
/// Layout `[camera][timestep][rgb][row][col]`, so camera `k` contributes a
/// `timesteps·3`-channel image with channel `t·3 + rgb`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionInput {
    pub cameras: usize,
    pub timesteps: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl VisionInput {
    pub fn channels_per_camera(&self) -> usize {
        self.timesteps * 3
    }

    pub fn camera(&self, k: usize) -> &[f32] {
        let n = self.channels_per_camera() * self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }
}

/// `images[t][camera]`, each expected to be `height × width`.
pub fn assemble_vision_input(images: &[Vec<RgbFrame>], height: usize, width: usize) -> Result<VisionInput, FeatureError> {
    let timesteps = images.len();
    let cameras = images.first().map_or(0, Vec::len);
    if timesteps == 0 || cameras == 0 {
        return Err(FeatureError::Dimension("no camera frames".into()));
    }
    let plane = height * width;
    let mut data = vec![0.0f32; cameras * timesteps * 3 * plane];
    for (t, frames) in images.iter().enumerate() {
        if frames.len() != cameras {
            return Err(FeatureError::Dimension(format!("frame {t} has {} cameras, expected {cameras}", frames.len())));
        }
        for (k, img) in frames.iter().enumerate() {
            if (img.height, img.width) != (height, width) || img.data.len() != 3 * plane {
                return Err(FeatureError::Dimension(format!(
                    "camera {k} frame {t} is {}x{}, expected {height}x{width}",
                    img.height, img.width
                )));
            }
            let base = (k * timesteps + t) * 3 * plane;
            for (p, px) in img.data.chunks_exact(3).enumerate() {
                for ch in 0..3 {
                    data[base + ch * plane + p] = px[ch] as f32 / 255.0;
                }
            }
        }
    }
    Ok(VisionInput {
        cameras,
        timesteps,
        height,
        width,
        data,
    })
}
