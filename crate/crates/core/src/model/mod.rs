//! Network architectures, loss, optimizer, training and checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::featurize::FeatureError;
use crate::grid::{GridSequence, GridSpec};
use crate::tensor::{BnMode, Checkpoint, Scalar, Tape, Tensor, TensorError, Var};

pub mod adam;
pub mod data;
pub mod grid_net;
pub mod layers;
pub mod loss;
pub mod train;
pub mod vision_net;

pub use adam::{Adam, AdamConfig};
pub use data::{Example, FeatureConfig, TrainingSet};
pub use grid_net::{GridNet, GridNetConfig};
pub use layers::Weights;
pub use loss::{loss, loss_terms, LossReport, LossWeights};
pub use train::{evaluate_loss, train, LogRecord, TrainConfig};
pub use vision_net::{ortho_transform, OrthoConfig, VisionNet, VisionNetConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Sensor modality. The declaration order (lidar, radar, vision) is also the
/// tie-break order used by fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Lidar,
    Radar,
    Vision,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Lidar, Modality::Radar, Modality::Vision];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Lidar => "lidar",
            Modality::Radar => "radar",
            Modality::Vision => "vision",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown modality {s:?} (expected lidar, radar or vision)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetConfig {
    Grid(GridNetConfig),
    Vision(VisionNetConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network<T> {
    Grid(GridNet<T>),
    Vision(VisionNet<T>),
}

impl<T: Scalar> Network<T> {
    pub fn new(config: &NetConfig) -> Result<Self, ModelError> {
        Ok(match config {
            NetConfig::Grid(c) => Network::Grid(GridNet::new(c.clone())?),
            NetConfig::Vision(c) => Network::Vision(VisionNet::new(c.clone())?),
        })
    }

    pub fn config(&self) -> NetConfig {
        match self {
            Network::Grid(n) => NetConfig::Grid(n.config.clone()),
            Network::Vision(n) => NetConfig::Vision(n.config.clone()),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: BnMode) -> Result<Var, ModelError> {
        match self {
            Network::Grid(n) => n.forward(tape, input, mode),
            Network::Vision(n) => n.forward(tape, input, mode),
        }
    }

    pub fn weights(&self) -> &Weights<T> {
        match self {
            Network::Grid(n) => &n.weights,
            Network::Vision(n) => &n.weights,
        }
    }

    pub fn weights_mut(&mut self) -> &mut Weights<T> {
        match self {
            Network::Grid(n) => &mut n.weights,
            Network::Vision(n) => &mut n.weights,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.weights().num_parameters()
    }

    /// Inference in eval mode; returns `[N, 15, rows, cols]` probabilities.
    pub fn infer(&mut self, input: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let x = tape.leaf(input);
        let y = self.forward(&mut tape, x, BnMode::Eval)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    modality: Modality,
    grid: GridSpec,
    features: FeatureConfig,
    net: NetConfig,
}

const META_FORMAT: &str = "gridcast-model-1";

/// A trained (or freshly initialized) network together with everything
/// needed to featurize its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub modality: Modality,
    pub grid: GridSpec,
    pub features: FeatureConfig,
    pub net: Network<f32>,
}

impl Model {
    pub fn new(modality: Modality, grid: GridSpec, features: FeatureConfig, net: &NetConfig) -> Result<Self, ModelError> {
        let kind_ok = matches!((modality, net), (Modality::Vision, NetConfig::Vision(_)) | (Modality::Lidar | Modality::Radar, NetConfig::Grid(_)));
        if !kind_ok {
            return Err(ModelError::Config(format!("{modality} needs the matching network kind")));
        }
        Ok(Self {
            modality,
            grid,
            features,
            net: Network::new(net)?,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            format: META_FORMAT.into(),
            modality: self.modality,
            grid: self.grid,
            features: self.features,
            net: self.net.config(),
        };
        Checkpoint {
            metadata: serde_json::to_string(&meta).expect("metadata serializes"),
            tensors: self.net.weights().to_named(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let meta: CheckpointMeta =
            serde_json::from_str(&ckpt.metadata).map_err(|e| ModelError::Checkpoint(format!("bad metadata: {e}")))?;
        if meta.format != META_FORMAT {
            return Err(ModelError::Checkpoint(format!("unsupported model format {:?}", meta.format)));
        }
        let mut model = Model::new(meta.modality, meta.grid, meta.features, &meta.net)?;
        model.net.weights_mut().load_named(&ckpt.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        Ok(self.to_checkpoint().write(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }

    /// Predicted grid sequences for every example, in mini-batches.
    pub fn predict(&mut self, data: &TrainingSet, batch_size: usize) -> Result<Vec<GridSequence>, ModelError> {
        if data.modality != self.modality || data.spec != self.grid {
            return Err(ModelError::Input(format!(
                "data is {} on {:?}, model is {} on {:?}",
                data.modality, data.spec, self.modality, self.grid
            )));
        }
        let mut out = Vec::with_capacity(data.len());
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(batch_size.max(1)) {
            let probs = self.net.infer(data.batch_input::<f32>(chunk))?;
            let per = probs.numel() / chunk.len();
            for part in probs.data().chunks_exact(per) {
                out.push(GridSequence::from_planar(self.grid, part).map_err(|e| ModelError::Input(e.to_string()))?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
