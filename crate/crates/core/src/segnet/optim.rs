//! AdamW with global gradient clipping and a warmup + cosine schedule.

use serde::{Deserialize, Serialize};

use super::params::ParamVec;
use crate::{Error, Result};

/// Linear warmup to `peak`, then cosine decay to `floor` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: u64,
    pub floor: f64,
    /// Step at which the cosine reaches `floor`; later steps stay there.
    pub total_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            peak: 1e-3,
            warmup: 500,
            floor: 1e-5,
            total_steps: 10_000,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if step <= self.warmup {
            if self.warmup == 0 {
                return self.peak;
            }
            return self.peak * step as f64 / self.warmup as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup).max(1) as f64;
        let progress = ((step - self.warmup) as f64 / span).min(1.0);
        self.floor + (self.peak - self.floor) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Global ℓ₂ bound on each gradient; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::default(),
            weight_decay: 1e-2,
            betas: (0.9, 0.999),
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if !(s.peak > 0.0 && s.floor >= 0.0 && s.floor <= s.peak) {
            return Err(Error::invalid("schedule", "need 0 <= floor <= peak, peak > 0"));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::invalid("betas", "each in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::invalid("weight_decay", "weight_decay >= 0 and eps > 0"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip_norm", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Optimizer moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m: ParamVec,
    pub v: ParamVec,
    pub cfg: AdamWConfig,
}

/// Norms observed by one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

impl OptState {
    pub fn new(like: &ParamVec, cfg: AdamWConfig) -> Self {
        Self {
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
            cfg,
        }
    }

    /// One clipped AdamW update of `params` in place.
    pub fn step(&mut self, params: &mut ParamVec, grad: &ParamVec) -> Result<StepReport> {
        params.check_same_layout(grad)?;
        params.check_same_layout(&self.m)?;
        self.step += 1;
        let t = self.step;
        let lr = self.cfg.schedule.lr(t);
        let grad_norm = grad.norm();
        let (clip_scale, clipped) = match self.cfg.clip_norm {
            Some(c) if grad_norm > c => (c / grad_norm, true),
            _ => (1.0, false),
        };
        let (b1, b2) = self.cfg.betas;
        let bc1 = 1.0 - b1.powi(t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - b2.powi(t.min(i32::MAX as u64) as i32);
        let (eps, wd) = (self.cfg.eps, self.cfg.weight_decay);
        let m = self.m.values_mut();
        let v = self.v.values_mut();
        for (((p, &g), m), v) in params.values_mut().iter_mut().zip(grad.values()).zip(m).zip(v) {
            let g = g * clip_scale;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
        }
        Ok(StepReport { lr, grad_norm, clipped })
    }
}

/// Functional form: returns the updated parameters and state.
pub fn adamw_step(state: &OptState, params: &ParamVec, grad: &ParamVec) -> Result<(ParamVec, OptState)> {
    let mut s = state.clone();
    let mut p = params.clone();
    s.step(&mut p, grad)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::segnet::params::Layout;

    fn vec_of(vals: &[f64]) -> ParamVec {
        let mut l = Layout::new();
        l.push("x", &[vals.len()]);
        ParamVec::from_values(Arc::new(l), vals.to_vec()).unwrap()
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::default();
        assert!((s.lr(250) - 0.5e-3).abs() < 1e-18);
        assert_eq!(s.lr(500), 1e-3);
        assert!((s.lr(s.total_steps) - 1e-5).abs() < 1e-15);
        assert!((s.lr(s.total_steps + 100) - 1e-5).abs() < 1e-15);
        let mid = s.warmup + (s.total_steps - s.warmup) / 2;
        assert!((s.lr(mid) - (1e-5 + (1e-3 - 1e-5) / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let p = vec_of(&[0.5, -2.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let st = OptState::new(&p, cfg);
        let (q, st) = adamw_step(&st, &p, &p.zeros_like()).unwrap();
        assert_eq!(q, p);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn clipping_halves_norm_two_gradient() {
        let p = vec_of(&[0.0, 0.0]);
        let st = OptState::new(&p, AdamWConfig::default());
        let g = vec_of(&[2.0 * 0.6, 2.0 * 0.8]);
        let (_, st) = adamw_step(&st, &p, &g).unwrap();
        // m = (1 − β₁)·g/2
        assert!((st.m.values()[0] - 0.1 * 0.6).abs() < 1e-15);
        assert!((st.m.values()[1] - 0.1 * 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_betas_reduce_to_normalized_sgd() {
        let cfg = AdamWConfig {
            schedule: LrSchedule {
                peak: 0.1,
                warmup: 0,
                floor: 0.1,
                total_steps: 1,
            },
            weight_decay: 0.0,
            betas: (0.0, 0.0),
            eps: 1e-8,
            clip_norm: None,
        };
        let p = vec_of(&[1.0, 1.0, 1.0]);
        let g = vec_of(&[3.0, -0.5, 1e-3]);
        let (q, _) = adamw_step(&OptState::new(&p, cfg), &p, &g).unwrap();
        for i in 0..3 {
            let gi = g.values()[i];
            let want = 1.0 - 0.1 * gi / (gi.abs() + 1e-8);
            assert!((q.values()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let p = vec_of(&[2.0]);
        let cfg = AdamWConfig {
            schedule: LrSchedule {
                peak: 0.1,
                warmup: 0,
                floor: 0.1,
                total_steps: 1,
            },
            ..AdamWConfig::default()
        };
        let (q, _) = adamw_step(&OptState::new(&p, cfg), &p, &p.zeros_like()).unwrap();
        assert!((q.values()[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }
}
