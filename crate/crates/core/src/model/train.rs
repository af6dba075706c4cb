use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::data::TrainingSet;
use super::loss::{loss_terms, tape_loss, LossWeights};
use super::{ModelError, Network};
use crate::grid::NUM_CLASSES;
use crate::sim::yaw_balanced_batches;
use crate::tensor::{BnMode, Scalar, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss_weights: LossWeights,
    /// Draw batches balanced over the nearest agent's heading; otherwise
    /// plain shuffled batches.
    pub balance_yaw: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            adam: AdamConfig::default(),
            loss_weights: LossWeights::default(),
            balance_yaw: true,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    /// Mean loss of the step's batch (before the update).
    pub loss: f64,
    /// Per-class shares of `loss` (VRU, Vehicle, Background).
    pub per_class: [f64; NUM_CLASSES],
}

/// Trains `net` in place and returns the per-step log.
pub fn train<T: Scalar>(net: &mut Network<T>, data: &TrainingSet, cfg: &TrainConfig) -> Result<Vec<LogRecord>, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    cfg.loss_weights.validate()?;
    let bins = if cfg.balance_yaw { data.yaw_bins() } else { vec![None; data.len()] };
    let batches = yaw_balanced_batches(&bins, cfg.batch_size.min(data.len()), cfg.steps, cfg.seed);
    let mut adam = Adam::new(cfg.adam, &net.weights().store);
    let cells = data.spec.num_cells();
    let mut log = Vec::with_capacity(cfg.steps);
    for (step, batch) in batches.iter().enumerate() {
        let mut tape = Tape::new();
        let x = tape.leaf(data.batch_input::<T>(batch));
        let probs = net.forward(&mut tape, x, BnMode::Train)?;
        let target = data.batch_target::<T>(batch);
        let loss = tape_loss(&mut tape, probs, &target, &cfg.loss_weights)?;
        let value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(ModelError::Divergence { step, loss: value });
        }
        let report = loss_terms(
            &tape.value(probs).to_f32(),
            &target.iter().map(|v| v.to_f32().unwrap_or(0.0)).collect::<Vec<_>>(),
            cells,
            &cfg.loss_weights,
        );
        log.push(LogRecord {
            step,
            loss: value,
            per_class: report.per_class,
        });
        let grads = tape.backward(loss)?;
        let store = &mut net.weights_mut().store;
        store.zero_grad();
        store.accumulate(&grads);
        adam.step(store)?;
    }
    Ok(log)
}

/// Mean loss over the whole set in eval mode.
pub fn evaluate_loss<T: Scalar>(net: &mut Network<T>, data: &TrainingSet, weights: &LossWeights, batch_size: usize) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let probs = net.infer(data.batch_input::<T>(chunk))?;
        let target: Vec<f32> = data.batch_target::<f32>(chunk);
        total += loss_terms(&probs.to_f32(), &target, data.spec.num_cells(), weights).mean * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}
