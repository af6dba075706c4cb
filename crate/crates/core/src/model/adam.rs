use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::{lit, ParamStore, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment buffer pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| vec![T::zero(); p.value.numel()]).collect::<Vec<_>>();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated grads. Every parameter must
    /// have a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<(), ModelError> {
        if store.len() != self.m.len() {
            return Err(ModelError::Config("optimizer was built for a different parameter set".into()));
        }
        if let Some(p) = store.iter().find(|p| p.grad.is_none()) {
            return Err(ModelError::MissingGrad(p.name.clone()));
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        let (one_b1, one_b2): (T, T) = (lit(1.0 - c.beta1), lit(1.0 - c.beta2));
        let step_size: T = lit(c.lr / (1.0 - c.beta1.powi(t)));
        let v_corr: T = lit(1.0 / (1.0 - c.beta2.powi(t)));
        let eps: T = lit(c.eps);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id);
            let grad = p.grad.as_ref().expect("checked above").data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                *w = *w - step_size * m[j] / ((v[j] * v_corr).sqrt() + eps);
            }
        }
        Ok(())
    }
}
