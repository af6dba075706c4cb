//! Conversion of simulated samples into network input/target buffers.

use serde::{Deserialize, Serialize};

use super::{ModelError, Modality};
use crate::featurize::{assemble_vision_input, featurize_lidar, featurize_radar, LidarFeatureConfig, RadarNorm};
use crate::grid::GridSpec;
use crate::sim::Sample;
use crate::tensor::{lit, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub lidar: LidarFeatureConfig,
    pub radar: RadarNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Lidar/radar: `[C, rows, cols]`; vision: `[camera][C][H][W]`.
    pub input: Vec<f32>,
    /// One-hot `[horizon][class][row][col]`.
    pub target: Vec<f32>,
    pub yaw_bin: Option<u8>,
}

/// Featurized examples of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub modality: Modality,
    pub spec: GridSpec,
    /// Per-example input shape: `[C, rows, cols]` or `[cameras, C, H, W]`.
    pub input_shape: Vec<usize>,
    pub examples: Vec<Example>,
}

pub fn featurize_sample(sample: &Sample, modality: Modality, features: &FeatureConfig) -> Result<(Vec<usize>, Vec<f32>), ModelError> {
    let spec = sample.labels.spec();
    let poses = sample.past_ego_poses();
    let (shape, data) = match modality {
        Modality::Lidar => {
            let f = featurize_lidar(&sample.inputs.lidar, poses, &spec, &features.lidar)?;
            (vec![f.channels, f.rows, f.cols], f.data)
        }
        Modality::Radar => {
            let f = featurize_radar(&sample.inputs.radar, poses, &sample.ego_velocities, &spec, &features.radar)?;
            (vec![f.channels, f.rows, f.cols], f.data)
        }
        Modality::Vision => {
            let first = sample
                .inputs
                .images
                .first()
                .and_then(|f| f.first())
                .ok_or_else(|| ModelError::Input("sample has no camera images".into()))?;
            let v = assemble_vision_input(&sample.inputs.images, first.height, first.width)?;
            let shape = vec![v.cameras, v.channels_per_camera(), v.height, v.width];
            (shape, v.data)
        }
    };
    Ok((shape, data))
}

impl TrainingSet {
    pub fn from_samples(samples: &[Sample], modality: Modality, features: &FeatureConfig) -> Result<Self, ModelError> {
        let spec = samples.first().map_or_else(GridSpec::default, |s| s.labels.spec());
        let mut input_shape = Vec::new();
        let mut examples = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.labels.spec() != spec {
                return Err(ModelError::Input(format!("sample {i} uses a different grid")));
            }
            let (shape, input) = featurize_sample(s, modality, features)?;
            if i == 0 {
                input_shape = shape;
            } else if shape != input_shape {
                return Err(ModelError::Input(format!("sample {i} input shape {shape:?} differs from {input_shape:?}")));
            }
            examples.push(Example {
                input,
                target: s.labels.to_planar(),
                yaw_bin: s.yaw_bin,
            });
        }
        Ok(Self {
            modality,
            spec,
            input_shape,
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn yaw_bins(&self) -> Vec<Option<u8>> {
        self.examples.iter().map(|e| e.yaw_bin).collect()
    }

    /// Network input for the given examples: `[N, C, rows, cols]`, or for
    /// vision `[cameras·N, C, H, W]` in camera-major order.
    pub fn batch_input<T: Scalar>(&self, indices: &[usize]) -> Tensor<T> {
        let n = indices.len();
        let conv = |v: &f32| lit::<T>(*v as f64);
        if self.modality == Modality::Vision {
            let (cams, rest) = (self.input_shape[0], &self.input_shape[1..]);
            let per_cam: usize = rest.iter().product();
            let mut data = Vec::with_capacity(cams * n * per_cam);
            for k in 0..cams {
                for &i in indices {
                    data.extend(self.examples[i].input[k * per_cam..(k + 1) * per_cam].iter().map(conv));
                }
            }
            let mut shape = vec![cams * n];
            shape.extend_from_slice(rest);
            Tensor::new(shape, data).expect("consistent shapes")
        } else {
            let data = indices.iter().flat_map(|&i| self.examples[i].input.iter().map(conv)).collect();
            let mut shape = vec![n];
            shape.extend_from_slice(&self.input_shape);
            Tensor::new(shape, data).expect("consistent shapes")
        }
    }

    pub fn batch_target<T: Scalar>(&self, indices: &[usize]) -> Vec<T> {
        indices
            .iter()
            .flat_map(|&i| self.examples[i].target.iter().map(|&v| lit::<T>(v as f64)))
            .collect()
    }
}
