//! Comparison of finished runs: per-run page Dice with client-stratified
//! BCa intervals, and paired differences with Hedges' g and Holm-corrected
//! t-tests for every pair of runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalConfig;
use crate::evalstats::{bca_ci, bca_ci_paired, hedges_g_paired, paired_t_holm, CiResult, Resampling};
use crate::fedcore::{Aggregator, RunManifest, TrainMode};
use crate::{Error, Result};

/// Per-page Dice averaged over the logged final rounds, keyed by record id
/// and carrying the client name.
pub type PageMeans = BTreeMap<String, (String, f64)>;

/// Reads `val_pages.csv` of one run.
pub fn load_run_pages(dir: &Path) -> Result<PageMeans> {
    let path = dir.join("val_pages.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, reason: &str| Error::Format {
        kind: "val_pages csv",
        path: path.clone(),
        reason: format!("line {line}: {reason}"),
    };
    let mut sums: BTreeMap<String, (String, f64, usize)> = BTreeMap::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.starts_with("round,record_id,client,dice") => {}
        _ => return Err(bad(1, "missing header")),
    }
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            return Err(bad(i + 1, "too few fields"));
        }
        let dice: f64 = f[3].parse().map_err(|_| bad(i + 1, "dice is not a number"))?;
        let e = sums.entry(f[1].to_string()).or_insert((f[2].to_string(), 0.0, 0));
        e.1 += dice;
        e.2 += 1;
    }
    if sums.is_empty() {
        return Err(bad(2, "no page rows"));
    }
    Ok(sums.into_iter().map(|(k, (c, s, n))| (k, (c, s / n as f64))).collect())
}

/// Run directories under `dir`: itself when it holds a manifest, else its
/// immediate subdirectories that do.
fn expand_runs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("manifest.json").exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::io(
            dir.join("manifest.json"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no finished run here"),
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    /// Run directory names (the group itself, or its seed subdirectories).
    pub runs: Vec<String>,
    pub mode: TrainMode,
    pub aggregator: Aggregator,
    pub seeds: Vec<u64>,
    /// Final global Dice of each seed, then their mean.
    pub final_global_dice: Vec<f64>,
    pub final_global_dice_mean: f64,
    /// `(round, mean over seeds)` at each milestone.
    pub milestones: Vec<(usize, f64)>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub n_pages: usize,
    /// Mean page Dice (final rounds averaged, then seeds) with its interval.
    pub page_dice: CiResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: String,
    pub b: String,
    /// Mean of `a − b` over pages.
    pub delta: CiResult,
    pub hedges_g: Option<f64>,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub p_holm: Option<f64>,
    pub reject: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: f64,
    pub alpha: f64,
    pub bootstrap_b: usize,
    pub runs: Vec<RunReport>,
    pub pairs: Vec<PairReport>,
}

struct Group {
    report_base: (String, Vec<PathBuf>, Vec<RunManifest>),
    pages: PageMeans,
}

fn load_group(dir: &Path) -> Result<Group> {
    let runs = expand_runs(dir)?;
    let mut manifests = Vec::new();
    let mut pages: Option<PageMeans> = None;
    for r in &runs {
        manifests.push(RunManifest::read(r.join("manifest.json"))?);
        let p = load_run_pages(r)?;
        pages = Some(match pages {
            None => p,
            Some(mut acc) => {
                if acc.len() != p.len() || acc.keys().zip(p.keys()).any(|(a, b)| a != b) {
                    return Err(Error::Config(format!("{} scores a different page set", r.display())));
                }
                for (k, v) in acc.iter_mut() {
                    v.1 += p[k].1;
                }
                acc
            }
        });
    }
    let mut pages = pages.expect("at least one run");
    for v in pages.values_mut() {
        v.1 /= runs.len() as f64;
    }
    let label = dir_name(dir);
    Ok(Group {
        report_base: (label, runs, manifests),
        pages,
    })
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Page values split into client strata, in client-name order.
fn strata(pages: &PageMeans) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut by: BTreeMap<&str, Vec<(&str, f64)>> = BTreeMap::new();
    for (id, (c, v)) in pages {
        by.entry(c.as_str()).or_default().push((id.as_str(), *v));
    }
    let mut ids = Vec::new();
    let mut vals = Vec::new();
    for (_, rows) in by {
        ids.extend(rows.iter().map(|(i, _)| i.to_string()));
        vals.push(rows.iter().map(|(_, v)| *v).collect());
    }
    (ids, vals)
}

/// Summarizes each run directory (or directory of seed replicates) and
/// compares every pair.
pub fn eval_runs(dirs: &[PathBuf], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if dirs.is_empty() {
        return Err(Error::invalid("runs", "need at least one run directory"));
    }
    let groups = dirs.iter().map(|d| load_group(d)).collect::<Result<Vec<_>>>()?;
    let resampling = Resampling::Random {
        b: cfg.bootstrap_b,
        seed: cfg.bootstrap_seed,
    };
    let mut runs = Vec::new();
    for g in &groups {
        let (label, paths, manifests) = &g.report_base;
        let m0 = &manifests[0];
        let finals: Vec<f64> = manifests.iter().map(|m| m.final_metrics.global_dice).collect();
        let milestones = m0
            .milestones
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mean = manifests.iter().map(|m| m.milestones[i].global_dice).sum::<f64>() / manifests.len() as f64;
                (s.round, mean)
            })
            .collect();
        let (_, vals) = strata(&g.pages);
        runs.push(RunReport {
            label: label.clone(),
            runs: paths.iter().map(|p| dir_name(p)).collect(),
            mode: m0.mode,
            aggregator: m0.aggregator,
            seeds: manifests.iter().map(|m| m.seed).collect(),
            final_global_dice_mean: finals.iter().sum::<f64>() / finals.len() as f64,
            final_global_dice: finals,
            milestones,
            epsilon: m0.privacy.epsilon,
            delta: m0.privacy.delta,
            n_pages: g.pages.len(),
            page_dice: bca_ci(&vals, cfg.level, resampling)?,
        });
    }

    let mut pairs = Vec::new();
    let mut diffs = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, b) = (&groups[i], &groups[j]);
            if a.pages.len() != b.pages.len() || a.pages.keys().zip(b.pages.keys()).any(|(x, y)| x != y) {
                return Err(Error::Config(format!(
                    "{} and {} were scored on different pages",
                    a.report_base.0, b.report_base.0
                )));
            }
            let (_, va) = strata(&a.pages);
            let (_, vb) = strata(&b.pages);
            let d: Vec<f64> = va
                .iter()
                .flatten()
                .zip(vb.iter().flatten())
                .map(|(x, y)| x - y)
                .collect();
            pairs.push(PairReport {
                a: a.report_base.0.clone(),
                b: b.report_base.0.clone(),
                delta: bca_ci_paired(&va, &vb, cfg.level, resampling)?,
                hedges_g: hedges_g_paired(&d).ok(),
                t: None,
                p: None,
                p_holm: None,
                reject: false,
            });
            diffs.push(d);
        }
    }
    if !diffs.is_empty() {
        for (p, row) in pairs.iter_mut().zip(paired_t_holm(&diffs, cfg.alpha)?) {
            p.t = row.test.t;
            p.p = row.test.p;
            p.p_holm = row.p_adjusted;
            p.reject = row.reject;
        }
    }
    Ok(EvalReport {
        level: cfg.level,
        alpha: cfg.alpha,
        bootstrap_b: cfg.bootstrap_b,
        runs,
        pairs,
    })
}

/// Writes the report to `out` as pretty JSON.
pub(crate) fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(out, text).map_err(|e| Error::io(out, e))
}
