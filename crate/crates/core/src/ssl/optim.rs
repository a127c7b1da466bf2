use serde::{Deserialize, Serialize};

use super::model::{Grads, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers in parameter declaration order. SGD uses only `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub t: u64,
    pub m: Grads,
    pub v: Grads,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &Model) -> Self {
        OptimizerState {
            kind,
            t: 0,
            m: Grads::zeros(&model.config),
            v: Grads::zeros(&model.config),
        }
    }

    /// One update at learning rate `lr`. Frozen tensors are skipped
    /// entirely, so neither they nor their moments change.
    pub fn step(&mut self, model: &mut Model, grads: &Grads, lr: f64) {
        self.t += 1;
        let trainable: Vec<bool> = (0..grads.tensors.len()).map(|i| model.is_trainable(i)).collect();
        let t = self.t as i32;
        for (i, param) in model.params_mut().into_iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let g = &grads.tensors[i];
            let m = &mut self.m.tensors[i];
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let v = &mut self.v.tensors[i];
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (k, p) in param.data_mut().iter_mut().enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::Sgd { momentum } => {
                    for (k, p) in param.data_mut().iter_mut().enumerate() {
                        m[k] = momentum * m[k] + g[k];
                        *p -= lr * m[k];
                    }
                }
            }
        }
    }
}

/// Cosine annealing from `base` at step 0 to 0 at step `total - 1`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let frac = step.min(total - 1) as f64 / (total - 1) as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::model::ModelConfig;

    #[test]
    fn cosine_schedule_shape() {
        let base = 1e-3;
        assert_eq!(cosine_lr(base, 0, 100), base);
        assert!(cosine_lr(base, 99, 100) <= 1e-3 * base);
        let mut prev = f64::INFINITY;
        for s in 0..100 {
            let lr = cosine_lr(base, s, 100);
            assert!(lr <= prev);
            prev = lr;
        }
        assert_eq!(cosine_lr(base, 0, 1), base);
    }

    #[test]
    fn frozen_tensors_untouched() {
        let cfg = ModelConfig {
            channels: vec![2, 2],
            embed_dim: 4,
            head_hidden: 4,
            proj_dim: 2,
            input_side: 8,
            ..Default::default()
        };
        let mut model = crate::ssl::model::Model::init(cfg, 0).unwrap();
        model.encoder.frozen_mask = vec![true, false, false];
        let before = model.clone();
        let mut grads = Grads::zeros(&model.config);
        for g in &mut grads.tensors {
            g.fill(1.0);
        }
        let mut opt = OptimizerState::new(OptimizerKind::default(), &model);
        opt.step(&mut model, &grads, 0.1);
        assert_eq!(model.encoder.blocks[0], before.encoder.blocks[0]);
        assert_ne!(model.encoder.blocks[1], before.encoder.blocks[1]);
        assert!(opt.m.tensors[0].iter().all(|&v| v == 0.0));
    }
}
