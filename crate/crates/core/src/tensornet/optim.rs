use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::{TensorError, TensorResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 5000,
            total_steps: 50_000,
        }
    }
}

/// Learning rate at 1-based step `t`: linear warmup to the base rate, cosine
/// decay to zero at `total_steps`, and zero afterwards.
pub fn lr_at(cfg: &AdamWConfig, t: u64) -> f64 {
    if t > cfg.total_steps {
        return 0.0;
    }
    if t <= cfg.warmup_steps {
        return cfg.lr * t as f64 / cfg.warmup_steps as f64;
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    let progress = (t - cfg.warmup_steps) as f64 / span;
    cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub cfg: AdamWConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    warned: bool,
}

impl OptimizerState {
    pub fn new(cfg: AdamWConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        OptimizerState { cfg, m: zeros.clone(), v: zeros, step: 0, warned: false }
    }
}

/// One decoupled-weight-decay Adam update. Returns the learning rate used.
pub fn adamw_step(params: &mut ParamSet, grads: &[Vec<f64>], state: &mut OptimizerState) -> TensorResult<f64> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TensorError::Shape { op: "adamw_step", left: vec![params.len()], right: vec![grads.len()] });
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.cfg;
    if t > cfg.total_steps && !state.warned {
        log::warn!("optimizer step {t} beyond the schedule of {} steps; learning rate held at 0", cfg.total_steps);
        state.warned = true;
    }
    let lr = lr_at(&cfg, t);
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
    for (i, id) in ids.into_iter().enumerate() {
        let g = &grads[i];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.values_mut(id);
        if g.len() != p.len() || m.len() != p.len() {
            return Err(TensorError::Shape { op: "adamw_step", left: vec![p.len()], right: vec![g.len()] });
        }
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * cfg.weight_decay * p[j];
            p[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::{InitScheme, Tensor};

    fn cfg() -> AdamWConfig {
        AdamWConfig { lr: 0.1, warmup_steps: 2, total_steps: 10, weight_decay: 0.01, ..AdamWConfig::default() }
    }

    #[test]
    fn schedule_boundaries() {
        let c = cfg();
        assert_eq!(lr_at(&c, 2), c.lr);
        assert_eq!(lr_at(&c, 1), c.lr / 2.0);
        assert!(lr_at(&c, 10).abs() < 1e-18);
        assert_eq!(lr_at(&c, 11), 0.0);
        let mid = lr_at(&c, 6);
        assert!((mid - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut ps = ParamSet::new(1);
        ps.add("w", 3, 2, InitScheme::FanInUniform).unwrap();
        let before = ps.clone();
        let mut st = OptimizerState::new(AdamWConfig { weight_decay: 0.0, ..cfg() }, &ps);
        for _ in 0..4 {
            adamw_step(&mut ps, &[vec![0.0; 6]], &mut st).unwrap();
        }
        assert_eq!(ps, before);
    }

    #[test]
    fn three_step_scalar_trace() {
        let c = cfg();
        let mut ps = ParamSet::new(0);
        let id = ps.insert("x", Tensor::scalar(1.5), crate::tensornet::InitMeta {
            scheme: InitScheme::Given,
            fan_in: 1,
            seed: 0,
        })
        .unwrap();
        let mut st = OptimizerState::new(c, &ps);
        // Reference: textbook AdamW written out with scalars.
        let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            adamw_step(&mut ps, &[vec![1.0]], &mut st).unwrap();
            let lr = if t <= 2 {
                0.1 * t as f64 / 2.0
            } else {
                0.1 * 0.5 * (1.0 + (std::f64::consts::PI * (t - 2) as f64 / 8.0).cos())
            };
            m = 0.9 * m + 0.1;
            v = 0.999 * v + 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x = x - lr * 0.01 * x - lr * mh / (vh.sqrt() + 1e-8);
            assert!((ps.value(id).item() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn past_the_schedule_the_rate_is_zero() {
        let mut ps = ParamSet::new(1);
        ps.add("w", 1, 1, InitScheme::Ones).unwrap();
        let mut st = OptimizerState::new(AdamWConfig { total_steps: 3, warmup_steps: 1, ..cfg() }, &ps);
        for _ in 0..3 {
            adamw_step(&mut ps, &[vec![1.0]], &mut st).unwrap();
        }
        let frozen = ps.clone();
        assert_eq!(adamw_step(&mut ps, &[vec![1.0]], &mut st).unwrap(), 0.0);
        assert_eq!(ps, frozen);
    }
}
