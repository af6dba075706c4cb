//! Parameter containers and the conv / batch-norm building blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::tensor::{lit, BnMode, NamedTensor, ParamId, ParamStore, RunningStats, Scalar, Tape, Tensor, TensorError, Var};

/// He-uniform initializer with a seeded stream.
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn he_uniform<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| lit(self.rng.random_range(-bound..bound))).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnLayer<T> {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: RunningStats<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

/// Conv (no bias) followed by batch norm and optionally ReLU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: usize,
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights<T> {
    pub store: ParamStore<T>,
    pub bn: Vec<BnLayer<T>>,
}

impl<T: Scalar> Weights<T> {
    pub fn new() -> Self {
        Self {
            store: ParamStore::new(),
            bn: Vec::new(),
        }
    }

    pub(crate) fn conv(&mut self, init: &mut Init, name: &str, out: usize, inp: usize, k: usize, bias: bool) -> Conv {
        let weight = self.store.add(format!("{name}.weight"), init.he_uniform(&[out, inp, k, k], inp * k * k));
        let bias = bias.then(|| self.store.add(format!("{name}.bias"), Tensor::zeros(&[out])));
        Conv { weight, bias }
    }

    pub(crate) fn batch_norm(&mut self, name: &str, channels: usize) -> usize {
        let gamma = self.store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()));
        let beta = self.store.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        self.bn.push(BnLayer {
            name: name.to_string(),
            gamma,
            beta,
            stats: RunningStats::new(channels),
        });
        self.bn.len() - 1
    }

    pub(crate) fn conv_bn(&mut self, init: &mut Init, name: &str, out: usize, inp: usize) -> ConvBn {
        ConvBn {
            conv: self.conv(init, &format!("{name}.conv"), out, inp, 3, false),
            bn: self.batch_norm(&format!("{name}.bn"), out),
        }
    }

    pub(crate) fn apply_conv(&self, tape: &mut Tape<T>, conv: &Conv, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(&self.store, conv.weight);
        let b = conv.bias.map(|b| tape.param(&self.store, b));
        tape.conv2d(x, w, b, 1)
    }

    pub(crate) fn apply_bn(&mut self, tape: &mut Tape<T>, idx: usize, x: Var, mode: BnMode) -> Result<Var, TensorError> {
        let layer = &mut self.bn[idx];
        let gamma = tape.param(&self.store, layer.gamma);
        let beta = tape.param(&self.store, layer.beta);
        tape.batch_norm(x, gamma, beta, &mut layer.stats, mode)
    }

    pub(crate) fn apply_conv_bn(&mut self, tape: &mut Tape<T>, l: &ConvBn, x: Var, mode: BnMode, relu: bool) -> Result<Var, TensorError> {
        let y = self.apply_conv(tape, &l.conv, x)?;
        let y = self.apply_bn(tape, l.bn, y, mode)?;
        Ok(if relu { tape.relu(y) } else { y })
    }

    /// Parameters followed by running statistics
    /// (`<bn>.running_mean`, `<bn>.running_var`).
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = self.store.to_named();
        for l in &self.bn {
            out.push(NamedTensor::from_vec(&format!("{}.running_mean", l.name), &l.stats.mean));
            out.push(NamedTensor::from_vec(&format!("{}.running_var", l.name), &l.stats.var));
        }
        out
    }

    pub fn load_named(&mut self, tensors: &[NamedTensor]) -> Result<(), ModelError> {
        self.store.load_named(tensors)?;
        for l in &mut self.bn {
            for (suffix, dst) in [("running_mean", &mut l.stats.mean), ("running_var", &mut l.stats.var)] {
                let name = format!("{}.{suffix}", l.name);
                let t = tensors.iter().find(|t| t.name == name).ok_or(TensorError::UnknownParam(name.clone()))?;
                let values = t.to_tensor::<T>()?.into_data();
                if values.len() != dst.len() {
                    return Err(TensorError::Shape(format!("{name}: {} values, expected {}", values.len(), dst.len())).into());
                }
                *dst = values;
            }
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        let mut store = ParamStore::new();
        for p in self.store.iter() {
            store.add(p.name.clone(), p.value.cast());
        }
        let bn = self
            .bn
            .iter()
            .map(|l| BnLayer {
                name: l.name.clone(),
                gamma: l.gamma,
                beta: l.beta,
                stats: RunningStats {
                    mean: l.stats.mean.iter().map(|&v| lit(v.to_f64().unwrap())).collect(),
                    var: l.stats.var.iter().map(|&v| lit(v.to_f64().unwrap())).collect(),
                },
            })
            .collect();
        Weights { store, bn }
    }
}

/// Reshapes `[N, H·C, rows, cols]` logits to `[N, H, C, rows, cols]`, applies
/// softmax over classes and restores the 4-D shape.
pub(crate) fn grouped_softmax<T: Scalar>(tape: &mut Tape<T>, logits: Var, classes: usize) -> Result<Var, TensorError> {
    let shape = tape.shape(logits).to_vec();
    let [n, ch, h, w] = shape[..] else {
        return Err(TensorError::Shape(format!("expected [N, C, H, W], got {shape:?}")));
    };
    let grouped = tape.reshape(logits, vec![n, ch / classes, classes, h, w])?;
    let probs = tape.softmax(grouped, 2)?;
    tape.reshape(probs, shape)
}
