//! Synthetic scenes, sensor simulation, sample building and the on-disk
//! dataset format.
//!
//! The scene timeline has nine indices covering −2 s … +2 s in 0.5 s steps;
//! index [`T0_INDEX`] is the current time t₀. Inputs use the first
//! [`NUM_PAST`] indices, labels the last five.

use thiserror::Error;

use crate::codec::CodecError;
use crate::grid::GridError;

pub mod batching;
pub mod dataset;
pub mod sample;
pub mod scene;
pub mod sensors;

pub use batching::{yaw_balanced_batches, NUM_YAW_BINS};
pub use dataset::{read_dataset, read_sample, write_dataset, write_sample, DatasetIndex};
pub use sample::{build_sample, dominant_yaw_bin, generate_samples, Sample, SensorConfig, SensorFrameSet};
pub use scene::{generate_scene, timestep_seconds, Agent, Motion, Range, Scene, SceneConfig};
pub use sensors::{simulate_cameras, simulate_lidar, simulate_radar, CameraRig, LidarConfig, RadarConfig, RadarReturn, RgbFrame};

pub const NUM_TIMESTEPS: usize = 9;
pub const T0_INDEX: usize = 4;
/// Past frames including t₀.
pub const NUM_PAST: usize = T0_INDEX + 1;
pub const TIME_STEP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Grid(#[from] GridError),
}
