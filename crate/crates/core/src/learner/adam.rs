//! Bias-corrected Adam over the model's parameter tensors.

use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    pub cfg: AdamConfig,
    pub m: MlpModel,
    pub v: MlpModel,
    pub step: u64,
}

impl OptimState {
    pub fn new(model: &MlpModel, cfg: AdamConfig) -> Self {
        Self { cfg, m: model.zeros_like(), v: model.zeros_like(), step: 0 }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &MlpModel) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let tensors = model.tensors_mut().into_iter().zip(grads.tensors());
        let moments = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for ((w, g), (m, v)) in tensors.zip(moments) {
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}
