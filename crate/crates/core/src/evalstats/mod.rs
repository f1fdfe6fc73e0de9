//! Segmentation and signal metrics, sample-size–weighted aggregation, and
//! the inferential statistics used to compare training methods.

mod special;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use special::{erfc, inc_beta, ln_gamma, norm_cdf, norm_quantile, student_t_two_sided};

use crate::raster::BinMask;
use crate::rng::sim_rng;
use crate::synthgen::LeadSignalSet;
use crate::{Error, Result};

/// Confusion counts of a predicted mask against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl MaskCounts {
    pub fn from_masks(pred: &BinMask, gt: &BinMask) -> Result<Self> {
        if pred.dims() != gt.dims() {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", gt.dims()),
                actual: format!("{:?}", pred.dims()),
            });
        }
        let mut c = MaskCounts::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &MaskCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn both_empty(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    /// `num / den`, or the empty-mask convention when `den = 0`.
    fn ratio(&self, num: u64, den: u64, empty_value: f64) -> f64 {
        if den == 0 {
            if self.both_empty() {
                empty_value
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    }

    pub fn metrics(&self) -> MaskMetrics {
        MaskMetrics {
            dice: self.ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, 1.0),
            iou: self.ratio(self.tp, self.tp + self.fp + self.fn_, 1.0),
            precision: self.ratio(self.tp, self.tp + self.fp, 1.0),
            recall: self.ratio(self.tp, self.tp + self.fn_, 1.0),
            specificity: self.ratio(self.tn, self.tn + self.fp, 0.0),
            mask_mse: if self.total() == 0 {
                0.0
            } else {
                (self.fp + self.fn_) as f64 / self.total() as f64
            },
        }
    }
}

/// Count-based overlap metrics. Ratios with a zero denominator are 1 for
/// dice, iou, precision and recall when both masks are empty, else 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub mask_mse: f64,
}

pub fn mask_metrics(pred: &BinMask, gt: &BinMask) -> Result<MaskMetrics> {
    Ok(MaskCounts::from_masks(pred, gt)?.metrics())
}

/// Mean per-pixel BCE of probabilities against a mask, with probabilities
/// clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_from_probs(prob: &[f64], gt: &BinMask) -> Result<f64> {
    if prob.len() != gt.data().len() {
        return Err(Error::DimensionMismatch {
            expected: gt.data().len().to_string(),
            actual: prob.len().to_string(),
        });
    }
    let s: f64 = prob
        .iter()
        .zip(gt.data())
        .map(|(&p, &m)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if m != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(s / prob.len() as f64)
}

/// One evaluated page.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub record_id: String,
    pub client: String,
    pub method: String,
    pub seed: u64,
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub bce: f64,
    pub mask_mse: f64,
    /// Per-lead MSE in mV², empty when the page was not vectorized.
    pub signal_mse: Vec<f64>,
}

/// `Σ n_k · mean_k / Σ n_k` over `(client mean, n_k)` pairs.
pub fn weighted_global(groups: &[(f64, f64)]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::invalid("groups", "need at least one client"));
    }
    if groups.iter().any(|&(_, n)| !(n > 0.0)) {
        return Err(Error::invalid("weights", "every n_k must be > 0"));
    }
    let num: f64 = groups.iter().map(|&(m, n)| m * n).sum();
    let den: f64 = groups.iter().map(|&(_, n)| n).sum();
    Ok(num / den)
}

/// Bootstrap confidence interval with its BCa constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub b: usize,
    pub z0: f64,
    pub acceleration: f64,
}

/// How bootstrap replicates are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Resampling {
    /// `b` stratified resamples; replicate `i` uses a stream keyed by
    /// `(seed, i)`.
    Random { b: usize, seed: u64 },
    /// Every ordered within-stratum resample once (tiny inputs only).
    Exhaustive,
}

/// Upper bound on the number of exhaustive resamples.
pub const MAX_EXHAUSTIVE: u64 = 2_000_000;

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Percentile interval of bootstrap replicates.
pub fn percentile_interval(replicates: &[f64], level: f64) -> (f64, f64) {
    let mut s = replicates.to_vec();
    s.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (quantile_sorted(&s, alpha), quantile_sorted(&s, 1.0 - alpha))
}

/// BCa interval from replicates and constants; with `z0 = a = 0` it is the
/// percentile interval.
pub fn bca_interval(replicates: &[f64], z0: f64, a: f64, level: f64) -> (f64, f64) {
    let alpha = (1.0 - level) / 2.0;
    if z0 == 0.0 && a == 0.0 {
        return percentile_interval(replicates, level);
    }
    let adj = |z: f64| norm_cdf(z0 + (z0 + z) / (1.0 - a * (z0 + z)));
    let a1 = adj(norm_quantile(alpha));
    let a2 = adj(norm_quantile(1.0 - alpha));
    let mut s = replicates.to_vec();
    s.sort_by(f64::total_cmp);
    (quantile_sorted(&s, a1), quantile_sorted(&s, a2))
}

fn check_strata(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid("strata", "need at least 2 strata"));
    }
    if sizes.iter().any(|&n| n < 2) {
        return Err(Error::invalid("strata", "need at least 2 pages per stratum"));
    }
    Ok(())
}

/// Stratified BCa interval of an arbitrary statistic.
///
/// `stat` receives one index list per stratum. Pages are resampled with
/// replacement within each stratum, so paired statistics see the same
/// indices for both methods. Acceleration comes from a leave-one-page-out
/// jackknife over all pages, pooled across strata.
pub fn bca_ci_with<F>(sizes: &[usize], stat: F, level: f64, resampling: Resampling) -> Result<CiResult>
where
    F: Fn(&[Vec<usize>]) -> f64 + Sync,
{
    check_strata(sizes)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level", "must lie in (0, 1)"));
    }
    let full: Vec<Vec<usize>> = sizes.iter().map(|&n| (0..n).collect()).collect();
    let point = stat(&full);
    let replicates: Vec<f64> = match resampling {
        Resampling::Random { b, seed } => {
            if b < 2 {
                return Err(Error::invalid("b", "need at least 2 resamples"));
            }
            (0..b)
                .into_par_iter()
                .map(|i| {
                    let mut rng = sim_rng(seed, "bootstrap", i as u64);
                    let idx: Vec<Vec<usize>> = sizes
                        .iter()
                        .map(|&n| {
                            (0..n)
                                .map(|_| (rand::RngCore::next_u64(&mut rng) % n as u64) as usize)
                                .collect()
                        })
                        .collect();
                    stat(&idx)
                })
                .collect()
        }
        Resampling::Exhaustive => {
            let total = sizes
                .iter()
                .try_fold(1u64, |acc, &n| acc.checked_mul((n as u64).checked_pow(n as u32)?))
                .filter(|&t| t <= MAX_EXHAUSTIVE)
                .ok_or_else(|| Error::invalid("strata", "too many resamples to enumerate"))?;
            (0..total)
                .into_par_iter()
                .map(|mut code| {
                    let idx: Vec<Vec<usize>> = sizes
                        .iter()
                        .map(|&n| {
                            (0..n)
                                .map(|_| {
                                    let d = (code % n as u64) as usize;
                                    code /= n as u64;
                                    d
                                })
                                .collect()
                        })
                        .collect();
                    stat(&idx)
                })
                .collect()
        }
    };
    let b = replicates.len();
    if replicates.iter().all(|&r| r == replicates[0]) && replicates[0] == point {
        return Ok(CiResult {
            point,
            lower: point,
            upper: point,
            level,
            b,
            z0: 0.0,
            acceleration: 0.0,
        });
    }
    let below = replicates.iter().filter(|&&r| r < point).count() as f64;
    // Keep the bias constant finite when every replicate lies on one side.
    let frac = (below / b as f64).clamp(0.5 / b as f64, 1.0 - 0.5 / b as f64);
    let z0 = norm_quantile(frac);

    let mut jack = Vec::new();
    for (s, &n) in sizes.iter().enumerate() {
        for leave in 0..n {
            let mut idx = full.clone();
            idx[s].remove(leave);
            jack.push(stat(&idx));
        }
    }
    let mean = jack.iter().sum::<f64>() / jack.len() as f64;
    let num: f64 = jack.iter().map(|j| (mean - j).powi(3)).sum();
    let den: f64 = jack.iter().map(|j| (mean - j).powi(2)).sum();
    let a = if den > 0.0 { num / (6.0 * den.powf(1.5)) } else { 0.0 };
    let (lower, upper) = bca_interval(&replicates, z0, a, level);
    Ok(CiResult {
        point,
        lower,
        upper,
        level,
        b,
        z0,
        acceleration: a,
    })
}

fn pooled_mean(strata: &[Vec<f64>], idx: &[Vec<usize>]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (vals, ix) in strata.iter().zip(idx) {
        for &i in ix {
            s += vals[i];
            n += 1;
        }
    }
    s / n as f64
}

/// BCa interval of the pooled page mean.
pub fn bca_ci(strata: &[Vec<f64>], level: f64, resampling: Resampling) -> Result<CiResult> {
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    bca_ci_with(&sizes, |idx| pooled_mean(strata, idx), level, resampling)
}

/// BCa interval of the paired mean difference `mean(a) − mean(b)`; both
/// methods are resampled with the same page indices.
pub fn bca_ci_paired(a: &[Vec<f64>], b: &[Vec<f64>], level: f64, resampling: Resampling) -> Result<CiResult> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::invalid("strata", "paired inputs must have equal shapes"));
    }
    let sizes: Vec<usize> = a.iter().map(Vec::len).collect();
    bca_ci_with(
        &sizes,
        |idx| pooled_mean(a, idx) - pooled_mean(b, idx),
        level,
        resampling,
    )
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Paired Hedges' g, `J · mean(d)/sd(d)` with `J = 1 − 3/(4(n−1) − 1)`.
pub fn hedges_g_paired(diffs: &[f64]) -> Result<f64> {
    if diffs.len() < 2 {
        return Err(Error::invalid("diffs", "need at least 2 pairs"));
    }
    let (mean, sd) = mean_sd(diffs);
    if !(sd > 0.0) {
        return Err(Error::Undefined("Hedges' g with zero standard deviation"));
    }
    let df = (diffs.len() - 1) as f64;
    let j = 1.0 - 3.0 / (4.0 * df - 1.0);
    Ok(j * mean / sd)
}

/// Paired t-test result; `t` and `p` are `None` when the differences have
/// zero spread.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
}

pub fn paired_t(diffs: &[f64]) -> Result<TTest> {
    if diffs.len() < 2 {
        return Err(Error::invalid("diffs", "need at least 2 pairs"));
    }
    let n = diffs.len();
    let (mean, sd) = mean_sd(diffs);
    if !(sd > 0.0) {
        return Ok(TTest {
            n,
            mean,
            t: None,
            p: None,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        n,
        mean,
        t: Some(t),
        p: Some(student_t_two_sided(t, (n - 1) as f64)),
    })
}

/// Holm step-down decisions over `p`, in input order. Undefined p-values
/// count toward `m` but are never rejected.
pub fn holm(p: &[Option<f64>], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).filter(|&i| p[i].is_some()).collect();
    order.sort_by(|&a, &b| p[a].unwrap().total_cmp(&p[b].unwrap()).then(a.cmp(&b)));
    let mut reject = vec![false; m];
    for (rank, &i) in order.iter().enumerate() {
        if p[i].unwrap() <= alpha / (m - rank) as f64 {
            reject[i] = true;
        } else {
            break;
        }
    }
    reject
}

/// Holm-adjusted p-values, `max_{j ≤ i} min(1, (m − j) p_(j))`.
pub fn holm_adjusted(p: &[Option<f64>]) -> Vec<Option<f64>> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).filter(|&i| p[i].is_some()).collect();
    order.sort_by(|&a, &b| p[a].unwrap().total_cmp(&p[b].unwrap()).then(a.cmp(&b)));
    let mut out = vec![None; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i].unwrap()).min(1.0));
        out[i] = Some(running);
    }
    out
}

/// One method pair in a Holm-corrected family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolmRow {
    pub test: TTest,
    pub p_adjusted: Option<f64>,
    pub reject: bool,
}

/// Paired t-tests for each pair of methods, Holm-corrected at `alpha`.
pub fn paired_t_holm(pairs: &[Vec<f64>], alpha: f64) -> Result<Vec<HolmRow>> {
    let tests = pairs.iter().map(|d| paired_t(d)).collect::<Result<Vec<_>>>()?;
    let p: Vec<Option<f64>> = tests.iter().map(|t| t.p).collect();
    let reject = holm(&p, alpha);
    let adj = holm_adjusted(&p);
    Ok(tests
        .into_iter()
        .zip(reject)
        .zip(adj)
        .map(|((test, reject), p_adjusted)| HolmRow {
            test,
            p_adjusted,
            reject,
        })
        .collect())
}

/// Linear resampling of every lead onto a new rate over the same duration.
pub fn resample(sig: &LeadSignalSet, fs: f64) -> Result<LeadSignalSet> {
    if !(fs > 0.0) {
        return Err(Error::invalid("fs", "must be positive"));
    }
    let n = (sig.duration * fs).round() as usize;
    let mut out = LeadSignalSet::zeros(fs, sig.duration);
    out.spans = sig.spans.clone();
    for (k, lead) in sig.leads.iter().enumerate() {
        out.leads[k] = (0..n)
            .map(|i| {
                let x = i as f64 / fs * sig.fs;
                let j = x.floor() as usize;
                if j + 1 >= lead.len() {
                    *lead.last().unwrap_or(&0.0)
                } else {
                    let f = x - j as f64;
                    lead[j] * (1.0 - f) + lead[j + 1] * f
                }
            })
            .collect();
    }
    Ok(out)
}

/// Per-lead mean squared error in mV², over the samples inside each
/// predicted lead's span. `pred` is resampled to the rate of `gt` first.
pub fn signal_mse(pred: &LeadSignalSet, gt: &LeadSignalSet) -> Result<[f64; 12]> {
    let pred = if pred.fs != gt.fs {
        resample(pred, gt.fs)?
    } else {
        pred.clone()
    };
    if pred.leads.len() != 12 || gt.leads.len() != 12 {
        return Err(Error::invalid("signal", "need 12 leads"));
    }
    let mut out = [0.0; 12];
    for k in 0..12 {
        let (p, g) = (&pred.leads[k], &gt.leads[k]);
        if p.len() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples", g.len()),
                actual: format!("{} samples", p.len()),
            });
        }
        let (t0, t1) = pred.spans[k];
        let (mut s, mut n) = (0.0, 0usize);
        for i in 0..p.len() {
            let t = i as f64 / gt.fs;
            if t >= t0 && t < t1 {
                s += (p[i] - g[i]).powi(2);
                n += 1;
            }
        }
        out[k] = if n == 0 { 0.0 } else { s / n as f64 };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let gt = BinMask::from_fn(4, 4, |x, _| x < 2);
        let m = mask_metrics(&gt, &gt).unwrap();
        assert_eq!((m.dice, m.iou, m.mask_mse), (1.0, 1.0, 0.0));
        let all = BinMask::from_fn(4, 4, |_, _| true);
        let m = mask_metrics(&all, &gt).unwrap();
        assert!((m.dice - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((m.iou, m.precision, m.recall), (0.5, 0.5, 1.0));
        let empty = BinMask::new(4, 4);
        let m = mask_metrics(&empty, &empty).unwrap();
        assert_eq!((m.dice, m.iou, m.precision, m.recall), (1.0, 1.0, 1.0, 1.0));
        let m = mask_metrics(&empty, &gt).unwrap();
        assert_eq!((m.dice, m.precision, m.recall), (0.0, 0.0, 0.0));
        assert!(mask_metrics(&BinMask::new(3, 4), &gt).is_err());
    }

    #[test]
    fn weighted_global_examples() {
        assert!((weighted_global(&[(0.5, 2.0), (0.7, 2.0)]).unwrap() - 0.6).abs() < 1e-15);
        assert!((weighted_global(&[(0.8, 3.0)]).unwrap() - 0.8).abs() < 1e-15);
        let paper = [
            (0.944, 6100.0),
            (0.939, 4900.0),
            (0.935, 4300.0),
            (0.929, 3500.0),
            (0.928, 3000.0),
        ];
        assert!((weighted_global(&paper).unwrap() - 0.936491).abs() < 1e-6);
        assert!(weighted_global(&[(0.5, 0.0)]).is_err());
    }

    #[test]
    fn hedges_examples() {
        let g = hedges_g_paired(&[0.0, 1.0, 2.0, 1.0]).unwrap();
        assert!((g - (8.0 / 11.0) / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(hedges_g_paired(&[-1.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(hedges_g_paired(&[0.0, -1.0, -2.0, -1.0]).unwrap(), -g);
        assert!(matches!(hedges_g_paired(&[0.3, 0.3]), Err(Error::Undefined(_))));
    }

    #[test]
    fn holm_worked_example() {
        let p = [Some(0.01), Some(0.03), Some(0.04)];
        assert_eq!(holm(&p, 0.05), vec![true, false, false]);
        assert_eq!(
            holm(&[Some(0.04), Some(0.01), Some(0.03)], 0.05),
            vec![false, true, false]
        );
        // Monotone in alpha.
        for &a in &[0.01, 0.02, 0.05, 0.08, 0.2] {
            let r1 = holm(&p, a);
            let r2 = holm(&p, a * 1.5);
            assert!(r1.iter().zip(&r2).all(|(x, y)| !x || *y));
        }
        let adj = holm_adjusted(&p);
        assert!((adj[0].unwrap() - 0.03).abs() < 1e-15);
        assert!((adj[1].unwrap() - 0.06).abs() < 1e-15);
        assert!((adj[2].unwrap() - 0.06).abs() < 1e-15);
    }

    #[test]
    fn t_test_edge_cases() {
        let r = paired_t(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((r.t, r.p), (None, None));
        let r = paired_t(&[1.0, -1.0, 0.5, -0.5]).unwrap();
        assert_eq!(r.p, Some(1.0));
        let rows = paired_t_holm(&[vec![0.0; 3], vec![0.1, 0.2, 0.15, 0.12]], 0.05).unwrap();
        assert!(!rows[0].reject);
        assert!(rows[1].test.p.unwrap() < 0.01);
    }

    #[test]
    fn bca_with_zero_constants_is_percentile() {
        let reps: Vec<f64> = (0..101).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(bca_interval(&reps, 0.0, 0.0, 0.95), percentile_interval(&reps, 0.95));
    }

    #[test]
    fn bca_degenerate_and_validation() {
        let strata = vec![vec![0.5; 3], vec![0.5; 4]];
        let ci = bca_ci(&strata, 0.95, Resampling::Random { b: 200, seed: 1 }).unwrap();
        assert_eq!((ci.lower, ci.point, ci.upper), (0.5, 0.5, 0.5));
        assert!(bca_ci(&[vec![1.0, 2.0]], 0.95, Resampling::Exhaustive).is_err());
        assert!(bca_ci(&[vec![1.0, 2.0], vec![1.0]], 0.95, Resampling::Exhaustive).is_err());
    }

    #[test]
    fn bca_random_is_reproducible_and_brackets_mean() {
        let strata = vec![
            (0..20).map(|i| 0.8 + 0.01 * (i % 7) as f64).collect::<Vec<_>>(),
            (0..15).map(|i| 0.7 + 0.02 * (i % 5) as f64).collect(),
        ];
        let r = Resampling::Random { b: 2000, seed: 3 };
        let a = bca_ci(&strata, 0.95, r).unwrap();
        let b = bca_ci(&strata, 0.95, r).unwrap();
        assert_eq!(a, b);
        assert!(a.lower < a.point && a.point < a.upper);
    }

    #[test]
    fn signal_mse_examples() {
        let gt = LeadSignalSet::zeros(100.0, 10.0);
        assert_eq!(signal_mse(&gt, &gt).unwrap(), [0.0; 12]);
        let mut p = gt.clone();
        for v in &mut p.leads[4] {
            *v = 0.1;
        }
        let m = signal_mse(&p, &gt).unwrap();
        assert!((m[4] - 0.01).abs() < 1e-15);
        assert_eq!(m.iter().filter(|&&v| v == 0.0).count(), 11);
        let slow = resample(&p, 50.0).unwrap();
        let m2 = signal_mse(&slow, &gt).unwrap();
        assert!((m2[4] - 0.01).abs() < 1e-12);
    }
}
