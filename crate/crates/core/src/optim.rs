//! Adam and the learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// One bias-corrected Adam update at 1-based step `t`.
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], lr: f64, t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
    let c1 = T::c(1.0 - cfg.beta1.powf(t as f64));
    let c2 = T::c(1.0 - cfg.beta2.powf(t as f64));
    let lr = T::c(lr);
    let eps = T::c(cfg.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Geometric interpolation from `start` at `t = 0` to `end` at `t = total`.
pub fn exponential_lr(start: f64, end: f64, t: u64, total: u64) -> f64 {
    if total == 0 {
        return start;
    }
    let frac = (t as f64 / total as f64).min(1.0);
    start * (end / start).powf(frac)
}

/// Adam state for a flat code vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VecAdam {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl VecAdam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, param: &mut [f32], grad: &[f32], lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        adam_update(param, grad, &mut self.m, &mut self.v, lr, self.t, cfg);
    }
}
