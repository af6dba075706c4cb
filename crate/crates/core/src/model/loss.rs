//! Class-weighted cross entropy over all cells and horizons.
//!
//! For predictions `q` and one-hot labels `p` the loss is
//! `−Σ_horizon Σ_cell Σ_class k_class · p · ln(q + 1e-12)`. Training
//! minimizes the mean per cell and horizon (the sum divided by
//! `cells · horizons`), which keeps the learning rate independent of the grid
//! size.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::grid::{GridSequence, SemClass, NUM_CLASSES, NUM_HORIZONS};
use crate::tensor::{lit, Scalar, Tape, TensorError, Var};

const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub vru: f64,
    pub vehicle: f64,
    pub background: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vru: 10.0,
            vehicle: 1.0,
            background: 1.0,
        }
    }
}

impl LossWeights {
    pub const UNIT: LossWeights = LossWeights {
        vru: 1.0,
        vehicle: 1.0,
        background: 1.0,
    };

    /// Weights in class-index order.
    pub fn by_class(&self) -> [f64; NUM_CLASSES] {
        let mut k = [0.0; NUM_CLASSES];
        k[SemClass::Vru.index()] = self.vru;
        k[SemClass::Vehicle.index()] = self.vehicle;
        k[SemClass::Background.index()] = self.background;
        k
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.by_class().iter().all(|&k| k > 0.0 && k.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::Config(format!("loss weights must be positive, got {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// The plain sum over horizons, cells and classes.
    pub sum: f64,
    /// Sum divided by the number of (cell, horizon) pairs.
    pub mean: f64,
    /// Each class's share of `mean` (the terms where the label is that
    /// class); the shares add up to `mean`.
    pub per_class: [f64; NUM_CLASSES],
}

/// Loss over planar `[sample][horizon][class][cell]` buffers.
pub fn loss_terms(pred: &[f32], target: &[f32], cells: usize, weights: &LossWeights) -> LossReport {
    let k = weights.by_class();
    let mut per_class = [0.0; NUM_CLASSES];
    for (i, (&p, &q)) in target.iter().zip(pred).enumerate() {
        if p != 0.0 {
            let c = (i / cells) % NUM_CLASSES;
            per_class[c] -= k[c] * p as f64 * (q as f64 + LOG_EPS).ln();
        }
    }
    let sum: f64 = per_class.iter().sum();
    let pairs = (target.len() / NUM_CLASSES).max(1) as f64;
    LossReport {
        sum,
        mean: sum / pairs,
        per_class: per_class.map(|v| v / pairs),
    }
}

/// Loss of one predicted sequence against a one-hot (or soft) label.
pub fn loss(pred: &GridSequence, label: &GridSequence, weights: &LossWeights) -> Result<LossReport, ModelError> {
    if pred.spec() != label.spec() {
        return Err(ModelError::Input("prediction and label grids differ".into()));
    }
    for g in &label.grids {
        g.check_normalized(1e-5).map_err(|e| ModelError::Input(format!("label: {e}")))?;
    }
    Ok(loss_terms(&pred.to_planar(), &label.to_planar(), pred.spec().num_cells(), weights))
}

/// Records the mean loss for probabilities `[N, 15, H, W]` on the tape.
pub fn tape_loss<T: Scalar>(tape: &mut Tape<T>, probs: Var, target: &[T], weights: &LossWeights) -> Result<Var, TensorError> {
    let shape = tape.shape(probs);
    let pairs = shape[0] * NUM_HORIZONS * shape[2..].iter().product::<usize>();
    let k: Vec<T> = weights.by_class().iter().map(|&v| lit(v)).collect();
    tape.weighted_cross_entropy(probs, target, &k, lit(1.0 / pairs as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, LabelGrid, SemanticGrid, HORIZONS};
    use crate::tensor::Tensor;

    fn seq(f: impl Fn(usize) -> SemanticGrid) -> GridSequence {
        GridSequence::new((0..NUM_HORIZONS).map(f).collect()).unwrap()
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let spec = GridSpec::centered(4, 4, 1.0);
        let mut labels = LabelGrid::filled(4, 4, SemClass::Background);
        labels.set(1, 2, SemClass::Vru);
        labels.set(3, 3, SemClass::Vehicle);
        let label = seq(|h| SemanticGrid::one_hot(spec, HORIZONS[h], &labels));
        let eps = 1e-6f32;
        let pred = GridSequence::from_planar(
            spec,
            &label.to_planar().iter().map(|&p| if p == 1.0 { 1.0 - eps } else { eps / 2.0 }).collect::<Vec<_>>(),
        )
        .unwrap();
        let r = loss(&pred, &label, &LossWeights::default()).unwrap();
        assert!(r.sum < 1e-3, "{r:?}");
    }

    #[test]
    fn uniform_prediction_costs_ln3_per_cell() {
        let spec = GridSpec::centered(6, 4, 1.0);
        let mut labels = LabelGrid::filled(6, 4, SemClass::Vehicle);
        labels.set(0, 0, SemClass::Background);
        let label = seq(|h| SemanticGrid::one_hot(spec, HORIZONS[h], &labels));
        let pred = seq(|h| SemanticGrid::uniform(spec, HORIZONS[h]));
        let r = loss(&pred, &label, &LossWeights::UNIT).unwrap();
        assert!((r.mean - 3f64.ln()).abs() < 1e-6);
        assert!((r.per_class.iter().sum::<f64>() - r.mean).abs() < 1e-12);
        assert!((r.sum - 3f64.ln() * 24.0 * 5.0).abs() < 1e-4);
    }

    #[test]
    fn soft_label_is_rejected() {
        let spec = GridSpec::centered(2, 2, 1.0);
        let bad = GridSequence::from_planar(spec, &vec![0.5; 60]).unwrap();
        assert!(loss(&bad, &bad, &LossWeights::default()).is_err());
    }

    #[test]
    fn vru_error_gradient_is_ten_times_vehicle() {
        // One cell, one horizon group; the same wrong prediction for a VRU
        // label and for a Vehicle label.
        let grad_for = |class: SemClass| {
            let mut tape = Tape::<f64>::new();
            let q = [0.2, 0.2, 0.6];
            let logits = tape.leaf(Tensor::new(vec![1, 3, 1, 1], q.iter().map(|v: &f64| v.ln()).collect()).unwrap());
            let probs = tape.softmax(logits, 1).unwrap();
            let mut target = vec![0.0; 3];
            target[class.index()] = 1.0;
            let k: Vec<f64> = LossWeights::default().by_class().to_vec();
            let l = tape.weighted_cross_entropy(probs, &target, &k, 1.0).unwrap();
            let g = tape.backward(l).unwrap();
            g.wrt(logits).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        let ratio = grad_for(SemClass::Vru) / grad_for(SemClass::Vehicle);
        assert!((ratio - 10.0).abs() < 1e-12, "{ratio}");
    }
}
