//! Adaptive-moment (Adam / AdamW) optimizer.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW); zero gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Learning rate at 0-based `step`: linear warm-up over `warmup` steps, then
/// (when `cosine`) a half-cosine decay to `final_frac · base` at `total`.
pub fn scheduled_lr(base: f64, step: u64, total: u64, warmup: u64, cosine: bool, final_frac: f64) -> f64 {
    let warm = if warmup > 0 && step < warmup {
        (step + 1) as f64 / warmup as f64
    } else {
        1.0
    };
    let decay = if cosine && total > warmup {
        let p = (step.saturating_sub(warmup) as f64 / (total - warmup) as f64).min(1.0);
        final_frac + (1.0 - final_frac) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    } else {
        1.0
    };
    base * warm * decay
}

/// Moment estimates for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            if cfg.weight_decay != 0.0 {
                params[i] -= cfg.lr * cfg.weight_decay * params[i];
            }
            params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

/// Adam over a named set of matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            states: BTreeMap::new(),
        }
    }

    /// Number of updates applied so far (max over tensors).
    pub fn steps(&self) -> u64 {
        self.states.values().map(|s| s.t).max().unwrap_or(0)
    }

    pub fn update(&mut self, name: &str, param: &mut Array2<f64>, grad: &Array2<f64>) {
        let n = param.len();
        let state = self
            .states
            .entry(name.to_string())
            .or_insert_with(|| AdamState::new(n));
        let p = param.as_slice_mut().expect("contiguous parameter");
        let g = grad.as_standard_layout();
        state.step(&self.config, p, g.as_slice().expect("contiguous gradient"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert_eq!(scheduled_lr(1.0, 0, 100, 10, true, 0.1), 0.1);
        assert_eq!(scheduled_lr(1.0, 9, 100, 10, true, 0.1), 1.0);
        assert!((scheduled_lr(1.0, 100, 100, 10, true, 0.1) - 0.1).abs() < 1e-12);
        assert_eq!(scheduled_lr(2.0, 50, 100, 0, false, 0.1), 2.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut st = AdamState::new(2);
        let mut p = vec![1.0, -1.0];
        st.step(&cfg, &mut p, &[2.0, -0.5]);
        // bias-corrected first step is lr·sign(g) up to eps
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        let mut st = AdamState::new(1);
        let mut x = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0)];
            st.step(&cfg, &mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
