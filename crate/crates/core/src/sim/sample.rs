use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, Scene, SceneConfig};
use super::sensors::{simulate_cameras, simulate_lidar, simulate_radar, CameraRig, LidarConfig, RadarConfig, RadarReturn, RgbFrame};
use super::{SimError, NUM_PAST, NUM_TIMESTEPS, T0_INDEX};
use crate::geometry::{normalize_angle, Point3, Pose2};
use crate::grid::{rasterize_labels, GridSequence, GridSpec, LabelGrid, SemanticGrid, HORIZONS};

use super::batching::NUM_YAW_BINS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub lidar: LidarConfig,
    pub radar: RadarConfig,
    /// `None` skips camera rendering (lidar/radar-only datasets).
    pub cameras: Option<CameraRig>,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            lidar: LidarConfig::default(),
            radar: RadarConfig::default(),
            cameras: Some(CameraRig::default()),
        }
    }
}

/// Raw sensor data for the past frames, oldest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorFrameSet {
    /// World-frame points.
    pub lidar: Vec<Vec<Point3>>,
    /// Returns in the ego frame at their capture time.
    pub radar: Vec<Vec<RadarReturn>>,
    /// `images[t][camera]`; empty when cameras were disabled.
    pub images: Vec<Vec<RgbFrame>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub inputs: SensorFrameSet,
    /// One-hot labels at every horizon in the ego-at-t₀ frame.
    pub labels: GridSequence,
    /// Ego world pose at each of the nine timeline indices.
    pub ego_poses: Vec<Pose2>,
    /// Ego velocity at each past index, in the ego frame at that index.
    pub ego_velocities: Vec<(f64, f64)>,
    pub yaw_bin: Option<u8>,
}

impl Sample {
    pub fn ego_t0(&self) -> Pose2 {
        self.ego_poses[T0_INDEX]
    }

    pub fn past_ego_poses(&self) -> &[Pose2] {
        &self.ego_poses[..NUM_PAST]
    }

    pub fn label_grids(&self) -> Vec<LabelGrid> {
        self.labels.labels()
    }
}

/// Label grids for t₀ … +2 s, all in the fixed ego-at-t₀ frame.
pub fn future_labels(scene: &Scene, spec: &GridSpec) -> Vec<LabelGrid> {
    let frame = scene.ego_t0();
    (T0_INDEX..NUM_TIMESTEPS)
        .map(|i| {
            let boxes: Vec<_> = scene.agents.iter().map(|a| a.box_in(i, &frame)).collect();
            rasterize_labels(&boxes, spec)
        })
        .collect()
}

/// Yaw bin (of [`NUM_YAW_BINS`] 45° bins over (−π, π]) of the agent nearest
/// to the ego at t₀, measured in the ego-at-t₀ frame.
pub fn dominant_yaw_bin(scene: &Scene) -> Option<u8> {
    let frame = scene.ego_t0();
    let nearest = scene
        .agents
        .iter()
        .map(|a| frame.inverse().compose(&a.trajectory[T0_INDEX]))
        .min_by(|a, b| a.x.hypot(a.y).total_cmp(&b.x.hypot(b.y)))?;
    Some(yaw_bin(nearest.yaw()))
}

pub(crate) fn yaw_bin(yaw: f64) -> u8 {
    let width = 2.0 * std::f64::consts::PI / NUM_YAW_BINS as f64;
    let shifted = normalize_angle(yaw) + std::f64::consts::PI;
    ((shifted / width).floor() as usize).min(NUM_YAW_BINS - 1) as u8
}

pub fn build_sample(scene: &Scene, sensors: &SensorConfig, spec: &GridSpec) -> Result<Sample, SimError> {
    spec.validate()?;
    let mut inputs = SensorFrameSet::default();
    for t in 0..NUM_PAST {
        inputs.lidar.push(simulate_lidar(scene, t, &sensors.lidar));
        inputs.radar.push(simulate_radar(scene, t, &sensors.radar));
        if let Some(rig) = &sensors.cameras {
            inputs.images.push(simulate_cameras(scene, t, rig));
        }
    }
    let grids = future_labels(scene, spec)
        .iter()
        .zip(HORIZONS)
        .map(|(labels, h)| SemanticGrid::one_hot(*spec, h, labels))
        .collect();
    Ok(Sample {
        seed: scene.seed,
        inputs,
        labels: GridSequence::new(grids)?,
        ego_poses: scene.ego_trajectory.clone(),
        ego_velocities: (0..NUM_PAST).map(|t| scene.ego_velocity_local(t)).collect(),
        yaw_bin: dominant_yaw_bin(scene),
    })
}

/// Deterministic samples for seeds `base_seed .. base_seed + n`.
pub fn generate_samples(
    scene_cfg: &SceneConfig,
    sensors: &SensorConfig,
    spec: &GridSpec,
    base_seed: u64,
    n: usize,
) -> Result<Vec<Sample>, SimError> {
    (0..n as u64)
        .map(|k| build_sample(&generate_scene(scene_cfg, base_seed.wrapping_add(k))?, sensors, spec))
        .collect()
}
