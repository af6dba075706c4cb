//! Multi-modal top-down semantic grid prediction.
//!
//! Lidar, radar and camera networks each consume five past sensor frames and
//! predict five future top-down semantic grids in the ego frame at t₀; the
//! per-modality grids are then fused by averaging or priority pooling. A
//! synthetic scene simulator supplies training data and ground truth.

pub mod codec;
pub mod featurize;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod tensor;
