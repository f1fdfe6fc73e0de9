//! Central Gaussian mechanism on the decoded aggregate and Rényi-DP
//! accounting across rounds.
//!
//! One round with noise multiplier σ costs `α/(2σ²)` at every order α.
//! Rounds compose additively, and `(ε, δ)` follows from
//! `ε = min_α [RDP(α) + ln(1/δ)/(α − 1)]`, minimized over a fixed α grid and
//! then refined by golden-section search around the best grid point.

use serde::{Deserialize, Serialize};

use crate::rng::{crypto_rng, BoxMuller};
use crate::{Error, Result};

/// Orders at which the accountant is evaluated before refinement.
pub fn default_alpha_grid() -> Vec<f64> {
    let mut g = vec![1.25, 1.5, 1.75, 2.0, 2.5];
    g.extend((3..=12).map(f64::from));
    g.extend([14.0, 16.0, 20.0, 24.0, 28.0, 32.0, 40.0, 48.0, 56.0, 64.0]);
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    /// Noise multiplier; the noise standard deviation is `sigma · clip`.
    pub sigma: f64,
    pub clip: f64,
    pub delta: f64,
    pub enabled: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            sigma: 0.6,
            clip: 1.0,
            delta: 1e-5,
            enabled: false,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(Error::invalid("clip", "must be finite and > 0"));
        }
        if self.enabled {
            if !(self.sigma > 0.0) || !self.sigma.is_finite() {
                return Err(Error::invalid("sigma", "must be finite and > 0"));
            }
            if !(self.delta > 0.0 && self.delta < 1.0) {
                return Err(Error::invalid("delta", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn noise_std(&self) -> f64 {
        self.sigma * self.clip
    }
}

/// RDP of one Gaussian mechanism with sensitivity-to-noise ratio `1/σ`.
pub fn rdp_of_gaussian(sigma: f64, alpha: f64) -> f64 {
    alpha / (2.0 * sigma * sigma)
}

/// Append-only record of the noise applied so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub rounds_applied: usize,
    pub sigmas: Vec<f64>,
    pub clips: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Cumulative RDP at each grid order.
    pub rdp: Vec<f64>,
}

impl Default for PrivacyLedger {
    fn default() -> Self {
        Self::new(default_alpha_grid())
    }
}

/// Converted guarantee and the order that attains it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
}

impl PrivacyLedger {
    pub fn new(alphas: Vec<f64>) -> Self {
        let n = alphas.len();
        Self {
            rounds_applied: 0,
            sigmas: Vec::new(),
            clips: Vec::new(),
            alphas,
            rdp: vec![0.0; n],
        }
    }

    /// Ledger after `rounds` rounds at one noise multiplier.
    pub fn uniform(sigma: f64, clip: f64, rounds: usize) -> Self {
        let mut l = Self::default();
        for _ in 0..rounds {
            l.record(sigma, clip);
        }
        l
    }

    pub fn record(&mut self, sigma: f64, clip: f64) {
        self.rounds_applied += 1;
        self.sigmas.push(sigma);
        self.clips.push(clip);
        for (r, &a) in self.rdp.iter_mut().zip(&self.alphas) {
            *r += rdp_of_gaussian(sigma, a);
        }
    }

    /// Cumulative RDP at an arbitrary order.
    pub fn rdp_at(&self, alpha: f64) -> f64 {
        self.sigmas.iter().map(|&s| rdp_of_gaussian(s, alpha)).sum()
    }
}

/// Adds i.i.d. `N(0, (σC)²)` noise to `aggregate` and records the round.
///
/// Gaussians come from Box–Muller over a ChaCha20 stream keyed by
/// `(seed, round)`.
pub fn add_central_noise(
    aggregate: &mut [f64],
    cfg: &DpConfig,
    ledger: &mut PrivacyLedger,
    seed: u64,
    round: u64,
) -> Result<()> {
    if !cfg.enabled {
        return Err(Error::DpDisabled);
    }
    cfg.validate()?;
    let std = cfg.noise_std();
    let mut g = BoxMuller::new(crypto_rng(seed, "dp-noise", round));
    for v in aggregate.iter_mut() {
        *v += std * g.next();
    }
    ledger.record(cfg.sigma, cfg.clip);
    Ok(())
}

fn objective(ledger: &PrivacyLedger, log_inv_delta: f64, alpha: f64) -> f64 {
    ledger.rdp_at(alpha) + log_inv_delta / (alpha - 1.0)
}

/// `ε(δ) = min_α [RDP(α) + ln(1/δ)/(α − 1)]`.
pub fn compose_and_convert(ledger: &PrivacyLedger, delta: f64) -> Result<EpsilonReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "must lie in (0, 1)"));
    }
    if ledger.rounds_applied == 0 {
        return Err(Error::EmptyLedger);
    }
    let l = (1.0 / delta).ln();
    let grid = &ledger.alphas;
    let vals: Vec<f64> = grid.iter().zip(&ledger.rdp).map(|(&a, &r)| r + l / (a - 1.0)).collect();
    let best = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or(Error::EmptyLedger)?;
    // The objective is convex in α, so the minimum lies between the grid
    // neighbours of the best grid point (or between 1 and the first one).
    let lo = if best == 0 { 1.0 } else { grid[best - 1] };
    let hi = if best + 1 < grid.len() {
        grid[best + 1]
    } else {
        grid[best]
    };
    let (alpha, eps) = golden_section(|a| objective(ledger, l, a), lo, hi);
    let (alpha, eps) = if eps < vals[best] {
        (alpha, eps)
    } else {
        (grid[best], vals[best])
    };
    Ok(EpsilonReport {
        epsilon: eps,
        delta,
        alpha,
    })
}

/// Minimizes a unimodal `f` on `(lo, hi]`; `lo` itself is never evaluated.
fn golden_section(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a) <= 1e-15 * b {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = if fc < fd { c } else { d };
    let mut best = (x, f(x));
    if hi > lo {
        let fh = f(hi);
        if fh < best.1 {
            best = (hi, fh);
        }
    }
    best
}

/// ε after `rounds` rounds at noise multiplier `sigma`.
pub fn epsilon_for(sigma: f64, rounds: usize, delta: f64) -> Result<EpsilonReport> {
    compose_and_convert(&PrivacyLedger::uniform(sigma, 1.0, rounds), delta)
}

/// Bracket searched by [`calibrate_sigma`].
pub const SIGMA_BRACKET: (f64, f64) = (0.1, 100.0);

/// Smallest-error σ in the bracket whose ε after `rounds` rounds equals
/// `target_eps` (bisection; ε decreases in σ).
pub fn calibrate_sigma(target_eps: f64, delta: f64, rounds: usize) -> Result<f64> {
    if !(target_eps > 0.0) || !target_eps.is_finite() {
        return Err(Error::invalid("target_eps", "must be finite and > 0"));
    }
    if rounds == 0 {
        return Err(Error::invalid("rounds", "must be positive"));
    }
    let (mut lo, mut hi) = SIGMA_BRACKET;
    let e_lo = epsilon_for(lo, rounds, delta)?.epsilon;
    let e_hi = epsilon_for(hi, rounds, delta)?.epsilon;
    if target_eps > e_lo || target_eps < e_hi {
        return Err(Error::UnreachableEpsilon {
            target: target_eps,
            lo,
            hi,
            eps_lo_sigma: e_lo,
            eps_hi_sigma: e_hi,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let e = epsilon_for(mid, rounds, delta)?.epsilon;
        if (e - target_eps).abs() <= 1e-12 * target_eps || hi - lo <= 1e-15 * hi {
            return Ok(mid);
        }
        if e > target_eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rdp_formula() {
        assert_eq!(rdp_of_gaussian(1.0, 2.0), 1.0);
        assert!((rdp_of_gaussian(0.6, 2.0) - 2.0 / 0.72).abs() < 1e-15);
        assert_eq!(rdp_of_gaussian(0.7, 6.0), 2.0 * rdp_of_gaussian(0.7, 3.0));
    }

    #[test]
    fn single_round_unit_sigma() {
        // min_α α/2 + 10/(α−1) at α = 1 + √20.
        let r = compose_and_convert(&PrivacyLedger::uniform(1.0, 1.0, 1), (-10f64).exp()).unwrap();
        assert!((r.alpha - (1.0 + 20f64.sqrt())).abs() < 1e-6);
        assert!((r.epsilon - 4.97213595499958).abs() < 1e-9);
    }

    #[test]
    fn monotonicity() {
        let e = |s, r, d| epsilon_for(s, r, d).unwrap().epsilon;
        assert!(e(0.6, 200, 1e-5) > e(0.6, 100, 1e-5));
        assert!(e(0.8, 100, 1e-5) < e(0.6, 100, 1e-5));
        assert!(e(0.6, 100, 1e-6) > e(0.6, 100, 1e-5));
    }

    #[test]
    fn empty_ledger_and_disabled_noise() {
        assert!(matches!(
            compose_and_convert(&PrivacyLedger::default(), 1e-5),
            Err(Error::EmptyLedger)
        ));
        let mut l = PrivacyLedger::default();
        let mut v = vec![0.0; 4];
        assert!(matches!(
            add_central_noise(&mut v, &DpConfig::default(), &mut l, 1, 0),
            Err(Error::DpDisabled)
        ));
        assert_eq!(l.rounds_applied, 0);
    }

    #[test]
    fn noise_statistics_and_replay() {
        let cfg = DpConfig {
            enabled: true,
            ..DpConfig::default()
        };
        let mut l = PrivacyLedger::default();
        let n = 1_000_000;
        let mut a = vec![0.0; n];
        add_central_noise(&mut a, &cfg, &mut l, 5, 0).unwrap();
        let mean = a.iter().sum::<f64>() / n as f64;
        let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 0.6).abs() < 0.006);
        let mut b = vec![0.0; n];
        add_central_noise(&mut b, &cfg, &mut l, 5, 0).unwrap();
        assert_eq!(a, b);
        let mut c = vec![0.0; n];
        add_central_noise(&mut c, &cfg, &mut l, 5, 1).unwrap();
        let corr = a.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>() / (n as f64 * 0.36);
        assert!(corr.abs() < 0.01);
        assert_eq!(l.rounds_applied, 3);
    }

    #[test]
    fn calibration_round_trip() {
        let e1 = epsilon_for(0.6, 1, 1e-5).unwrap().epsilon;
        let s = calibrate_sigma(e1, 1e-5, 1).unwrap();
        assert!((s - 0.6).abs() < 1e-4);
        let s100 = calibrate_sigma(8.0, 1e-5, 100).unwrap();
        let back = epsilon_for(s100, 100, 1e-5).unwrap().epsilon;
        assert!((back - 8.0).abs() <= 1e-6 * 8.0);
        assert!(calibrate_sigma(8.0, 1e-5, 200).unwrap() > s100);
        assert!(matches!(
            calibrate_sigma(1e-6, 1e-5, 100),
            Err(Error::UnreachableEpsilon { .. })
        ));
    }
}
