//! AdamW with a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_min: 1e-6,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Cosine annealing without restarts from `lr0` at step 0 down to `lr_min`
/// at `total_steps`. Steps past the end stay at `lr_min`.
pub fn cosine_lr(step: usize, total_steps: usize, cfg: &OptimConfig) -> f64 {
    if step >= total_steps {
        return cfg.lr_min;
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + phase.cos())
}

/// Moment accumulators for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: OptimConfig,
    pub total_steps: usize,
    pub step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Whether weight decay applies to each tensor.
    decay: Vec<bool>,
}

impl OptimState {
    /// `sizes[k]` is the length of parameter tensor `k`.
    pub fn new(config: OptimConfig, total_steps: usize, sizes: &[usize], decay: &[bool]) -> Self {
        assert_eq!(sizes.len(), decay.len());
        Self {
            config,
            total_steps,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            decay: decay.to_vec(),
        }
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.step, self.total_steps, &self.config)
    }
}

/// One AdamW update with decoupled weight decay. Returns the learning rate
/// that was used.
pub fn adamw_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptimState) -> Result<f64> {
    ensure!(
        params.len() == state.m.len() && grads.len() == state.m.len(),
        "expected {} parameter tensors, got {} params and {} grads",
        state.m.len(),
        params.len(),
        grads.len()
    );
    let c = state.config;
    let lr = state.lr();
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for k in 0..params.len() {
        let (p, g) = (&mut *params[k], grads[k]);
        ensure!(
            p.len() == g.len() && p.len() == state.m[k].len(),
            "parameter tensor {k} has mismatched lengths"
        );
        let wd = if state.decay[k] { c.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + c.eps) + wd * p[i]);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = OptimConfig::default();
        assert_eq!(cosine_lr(0, 1000, &c), 1e-4);
        assert!((cosine_lr(1000, 1000, &c) - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(500, 1000, &c) - (1e-4 + 1e-6) / 2.0).abs() < 1e-18);
        assert_eq!(cosine_lr(5000, 1000, &c), 1e-6);
    }

    #[test]
    fn schedule_is_monotone() {
        let c = OptimConfig::default();
        let lrs: Vec<f64> = (0..=100).map(|s| cosine_lr(s, 100, &c)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimState::new(cfg, 10, &[3], &[true]);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            adamw_step(&mut [&mut p], &[&[0.0; 3]], &mut st).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimState::new(cfg, 100, &[1], &[true]);
        let mut p = vec![0.3];
        adamw_step(&mut [&mut p], &[&[1.0]], &mut st).unwrap();
        assert!((0.3 - p[0] - 1e-4).abs() < 1e-11, "{}", p[0]);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut st = OptimState::new(OptimConfig::default(), 100, &[1, 1], &[true, false]);
        let (mut a, mut b) = (vec![2.0], vec![2.0]);
        adamw_step(&mut [&mut a, &mut b], &[&[0.0], &[0.0]], &mut st).unwrap();
        assert!((a[0] - 2.0 * (1.0 - 1e-8)).abs() < 1e-15);
        assert_eq!(b[0], 2.0);
    }

    #[test]
    fn quadratic_descends() {
        let cfg = OptimConfig {
            lr0: 1e-2,
            lr_min: 1e-4,
            ..Default::default()
        };
        let mut st = OptimState::new(cfg, 100, &[1], &[true]);
        let mut x = vec![1.0];
        let mut losses = Vec::new();
        for _ in 0..100 {
            let g = 2.0 * x[0];
            adamw_step(&mut [&mut x], &[&[g]], &mut st).unwrap();
            losses.push(x[0] * x[0]);
        }
        assert!(losses[5..].windows(2).all(|w| w[1] < w[0]));
    }
}
