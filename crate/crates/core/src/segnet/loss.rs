//! Compound segmentation loss on logits: mean BCE plus `λ_D (1 − Dice_soft)`.

use serde::{Deserialize, Serialize};

use super::ops::sigmoid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_dice: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_dice: 1.0,
            dice_eps: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_dice >= 0.0) || !self.lambda_dice.is_finite() {
            return Err(Error::invalid("lambda_dice", "must be finite and >= 0"));
        }
        if !(self.dice_eps > 0.0) || !self.dice_eps.is_finite() {
            return Err(Error::invalid("dice_eps", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Loss components of one prediction head.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub bce: f64,
    pub dice_soft: f64,
    pub total: f64,
}

/// Soft Dice `(2 Σ M P + ε) / (Σ M + Σ P + ε)`.
pub fn soft_dice(prob: &[f64], mask: &[u8], eps: f64) -> f64 {
    let (mut inter, mut sum) = (0.0, 0.0);
    for (&p, &m) in prob.iter().zip(mask) {
        let m = m as f64;
        inter += p * m;
        sum += p + m;
    }
    (2.0 * inter + eps) / (sum + eps)
}

/// Mean binary cross-entropy on logits, `max(z,0) − z m + ln(1 + e^{−|z|})`.
pub fn bce_with_logits(logits: &[f64], mask: &[u8]) -> f64 {
    let s: f64 = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| z.max(0.0) - z * m as f64 + (-z.abs()).exp().ln_1p())
        .sum();
    s / logits.len() as f64
}

/// Loss of one head and its gradient with respect to the logits.
pub fn head_loss(logits: &[f64], mask: &[u8], cfg: &LossConfig) -> (LossParts, Vec<f64>) {
    debug_assert_eq!(logits.len(), mask.len());
    let n = logits.len() as f64;
    let prob: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let bce = bce_with_logits(logits, mask);
    let (mut inter, mut sum) = (0.0, 0.0);
    for (&p, &m) in prob.iter().zip(mask) {
        inter += p * m as f64;
        sum += p + m as f64;
    }
    let num = 2.0 * inter + cfg.dice_eps;
    let den = sum + cfg.dice_eps;
    let dice = num / den;
    let grad = prob
        .iter()
        .zip(mask)
        .map(|(&p, &m)| {
            let m = m as f64;
            let d_dice_dp = (2.0 * m * den - num) / (den * den);
            (p - m) / n - cfg.lambda_dice * d_dice_dp * p * (1.0 - p)
        })
        .collect();
    let parts = LossParts {
        bce,
        dice_soft: dice,
        total: bce + cfg.lambda_dice * (1.0 - dice),
    };
    (parts, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_at_half_probability() {
        let n = 64;
        let logits = vec![0.0; n];
        let mask = vec![0u8; n];
        let eps = 1.0;
        let (parts, _) = head_loss(
            &logits,
            &mask,
            &LossConfig {
                lambda_dice: 1.0,
                dice_eps: eps,
            },
        );
        assert!((parts.bce - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((parts.dice_soft - eps / (0.5 * n as f64 + eps)).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_has_unit_dice() {
        let mask = [1u8, 0, 1, 1, 0];
        let prob: Vec<f64> = mask.iter().map(|&m| m as f64).collect();
        assert_eq!(soft_dice(&prob, &mask, 1e-6), 1.0);
    }

    #[test]
    fn logit_gradient_matches_differences() {
        let logits = [0.3, -1.2, 2.0, 0.0, -0.4, 1.1];
        let mask = [1u8, 0, 1, 0, 0, 1];
        let cfg = LossConfig {
            lambda_dice: 0.7,
            dice_eps: 0.5,
        };
        let (_, g) = head_loss(&logits, &mask, &cfg);
        for i in 0..logits.len() {
            let h = 1e-6;
            let mut a = logits;
            let mut b = logits;
            a[i] += h;
            b[i] -= h;
            let fd = (head_loss(&a, &mask, &cfg).0.total - head_loss(&b, &mask, &cfg).0.total) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn permutation_invariance() {
        let logits = [0.3, -1.2, 2.0, 0.0, -0.4, 1.1];
        let mask = [1u8, 0, 1, 0, 0, 1];
        let perm = [4, 2, 5, 0, 1, 3];
        let pl: Vec<f64> = perm.iter().map(|&i| logits[i]).collect();
        let pm: Vec<u8> = perm.iter().map(|&i| mask[i]).collect();
        let cfg = LossConfig::default();
        let a = head_loss(&logits, &mask, &cfg).0.total;
        let b = head_loss(&pl, &pm, &cfg).0.total;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn loss_bounds() {
        let logits = [5.0, -3.0, 0.2];
        let mask = [0u8, 1, 1];
        let (p, _) = head_loss(&logits, &mask, &LossConfig::default());
        assert!(p.bce >= 0.0);
        assert!((0.0..=1.0).contains(&(1.0 - p.dice_soft)));
    }
}
