//! Experiment configuration and the command entry points behind the
//! `ecgfed` binary. Every command returns a JSON summary; the binary
//! prints it.

mod eval;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use eval::{eval_runs, load_run_pages, EvalReport, PairReport, RunReport};

use crate::digitize::{digitize_page, InferOptions, PreprocessOptions, VectorizeParams};
use crate::dpcore::epsilon_for;
use crate::fedcore::{run_experiment, FederationConfig, PrivacyConfig, RunSpec};
use crate::raster::read_pgm;
use crate::segnet::{AdamWConfig, LocalTrainOptions, NetConfig, ParamVec, SegModel, SegNet};
use crate::synthgen::{build_dataset, load_dataset, prepare_out_dir, CalibrationMeta, DatasetSpec};
use crate::{Error, Result};

/// Statistics settings for `eval` plus validation logging for `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Trace-centered validation crops per page.
    pub val_crops_per_page: usize,
    /// Rounds at the end of a run whose per-page scores are logged and
    /// averaged for paired tests.
    pub last_rounds: usize,
    pub bootstrap_b: usize,
    pub bootstrap_seed: u64,
    pub level: f64,
    pub alpha: f64,
    /// Training seeds a sweep replicates over.
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            val_crops_per_page: 2,
            last_rounds: 5,
            bootstrap_b: 2000,
            bootstrap_seed: 0,
            level: 0.95,
            alpha: 0.05,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.val_crops_per_page == 0 || self.last_rounds == 0 {
            return Err(Error::Config(
                "eval.val_crops_per_page and eval.last_rounds must be positive".into(),
            ));
        }
        if self.bootstrap_b < 2 {
            return Err(Error::Config("eval.bootstrap_b must be at least 2".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("eval.level and eval.alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Dataset read by `train`.
    pub dataset_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of clients.
    pub workers: Option<usize>,
}

/// The whole configuration file. Every section is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training seed.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: NetConfig,
    pub optimizer: AdamWConfig,
    pub local: LocalTrainOptions,
    pub federation: FederationConfig,
    pub privacy: PrivacyConfig,
    pub eval: EvalConfig,
    pub preprocess: PreprocessOptions,
    pub infer: InferOptions,
    pub vectorize: VectorizeParams,
    pub io: IoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = NetConfig::default();
        Self {
            seed: 0,
            dataset: DatasetSpec::default(),
            infer: InferOptions {
                tile: model.patch,
                ..InferOptions::default()
            },
            model,
            optimizer: AdamWConfig::default(),
            local: LocalTrainOptions::default(),
            federation: FederationConfig::default(),
            privacy: PrivacyConfig::default(),
            eval: EvalConfig::default(),
            preprocess: PreprocessOptions::default(),
            vectorize: VectorizeParams::default(),
            io: IoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text).map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("{}: {msg}", p.display())),
                    other => other,
                })
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tag = |section: &str, e: Error| Error::Config(format!("[{section}] {e}"));
        self.dataset.validate().map_err(|e| tag("dataset", e))?;
        self.model.validate().map_err(|e| tag("model", e))?;
        self.optimizer.validate().map_err(|e| tag("optimizer", e))?;
        self.local.validate().map_err(|e| tag("local", e))?;
        self.federation.validate().map_err(|e| tag("federation", e))?;
        self.privacy.validate().map_err(|e| tag("privacy", e))?;
        self.vectorize.validate().map_err(|e| tag("vectorize", e))?;
        self.eval.validate()?;
        self.run_spec().validate().map_err(|e| tag("federation", e))
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            seed: self.seed,
            net: self.model.clone(),
            optimizer: self.optimizer,
            local: self.local,
            federation: self.federation,
            privacy: self.privacy,
            val_crops_per_page: self.eval.val_crops_per_page,
            page_log_rounds: self.eval.last_rounds,
        }
    }

    /// Fully resolved config as JSON.
    pub fn resolved(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Renders the configured dataset into `out`.
pub fn cmd_render(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<Value> {
    let manifest = build_dataset(&cfg.dataset, out, force)?;
    let mut per_client = serde_json::Map::new();
    for p in &cfg.dataset.profiles {
        per_client.insert(p.name.clone(), json!(p.n_pages));
    }
    Ok(json!({
        "command": "render",
        "out": out,
        "pages": manifest.records.len(),
        "clients": per_client,
        "seed": cfg.dataset.seed,
    }))
}

/// Trains into `out`, resuming when `out` holds committed state of the
/// same config. `force` discards whatever `out` holds.
pub fn cmd_train(cfg: &ExperimentConfig, dataset: Option<&Path>, out: &Path, force: bool) -> Result<Value> {
    let data_dir = dataset
        .map(Path::to_path_buf)
        .or_else(|| cfg.io.dataset_dir.clone())
        .ok_or_else(|| Error::Config("no dataset: pass --data or set io.dataset_dir".into()))?;
    let manifest_path = data_dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::io(
            &manifest_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset manifest not found"),
        ));
    }
    let resumable = out.join("state").exists() || out.join("state.old").exists();
    if force && out.exists() {
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    if !(resumable && !force) {
        prepare_out_dir(out, false)?;
    }
    let (_, pages) = load_dataset(&data_dir)?;
    let outcome = run_experiment(&cfg.run_spec(), &pages, out, &cfg.resolved())?;
    let m = &outcome.manifest;
    Ok(json!({
        "command": "train",
        "out": out,
        "mode": m.mode,
        "aggregator": m.aggregator,
        "rounds": m.rounds,
        "final_global_dice": m.final_metrics.global_dice,
        "epsilon": m.privacy.epsilon,
        "delta": m.privacy.delta,
    }))
}

/// Digitizes one page with a trained checkpoint.
pub fn cmd_digitize(
    cfg: &ExperimentConfig,
    model: &Path,
    page: &Path,
    calib: &Path,
    out: &Path,
    viz: Option<&Path>,
) -> Result<Value> {
    let params = ParamVec::read_checkpoint(model)?;
    let base = NetConfig {
        patch: cfg.infer.tile,
        ..cfg.model.clone()
    };
    let net_cfg = NetConfig::from_layout(params.layout(), &base)?;
    let net = SegNet::new(net_cfg)?;
    let params = ParamVec::from_values(net.layout().clone(), params.into_values())?;
    let model = SegModel::new(net, params)?;
    let image = read_pgm(page)?;
    let calib = CalibrationMeta::read_json(calib)?;
    let d = digitize_page(&model, &image, &calib, &cfg.preprocess, &cfg.infer, &cfg.vectorize)?;
    d.signal.write_csv(out)?;
    if let Some(v) = viz {
        d.display.write_csv(v)?;
    }
    Ok(json!({
        "command": "digitize",
        "out": out,
        "viz": viz,
        "skew_estimate_deg": d.skew_estimate_deg,
        "mm_per_px": [d.mm_per_px.0, d.mm_per_px.1],
        "leads": d.flags,
    }))
}

/// Compares finished runs and writes `stats.json`-style output to `out`.
pub fn cmd_eval(cfg: &ExperimentConfig, runs: &[PathBuf], out: &Path) -> Result<Value> {
    let report = eval_runs(runs, &cfg.eval)?;
    eval::write_report(&report, out)?;
    Ok(json!({
        "command": "eval",
        "out": out,
        "runs": report.runs.iter().map(|r| json!({"label": r.label, "final_global_dice": r.final_global_dice_mean})).collect::<Vec<_>>(),
        "pairs": report.pairs.iter().map(|p| json!({"a": p.a, "b": p.b, "delta": p.delta.point, "p_holm": p.p_holm, "reject": p.reject})).collect::<Vec<_>>(),
    }))
}

/// `ε` of `rounds` Gaussian rounds at noise multiplier `sigma`.
pub fn cmd_accountant(sigma: f64, rounds: usize, delta: f64) -> Result<Value> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", "must be finite and > 0"));
    }
    let r = epsilon_for(sigma, rounds, delta)?;
    Ok(json!({
        "command": "accountant",
        "sigma": sigma,
        "rounds": rounds,
        "delta": r.delta,
        "epsilon": r.epsilon,
        "alpha": r.alpha,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_sum_to_desk_scale() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.dataset.total_pages(), 720);
        let back = ExperimentConfig::parse(&cfg.resolved().to_string()).unwrap();
        assert_eq!(back, cfg);
        let toml_text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&toml_text).unwrap(), cfg);
    }

    #[test]
    fn sections_override_and_unknown_keys_fail() {
        let cfg = ExperimentConfig::parse(
            "seed = 3\n[federation]\naggregator = \"fedadam\"\nrounds = 30\n[model]\nchannels = [4, 8, 16]\npatch = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.federation.rounds, 30);
        assert_eq!(cfg.model.channels, vec![4, 8, 16]);
        assert!(matches!(
            ExperimentConfig::parse("[federation]\nroundz = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(ExperimentConfig::parse("bogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::parse("[federation]\nrounds = 0\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn accountant_command() {
        let v = cmd_accountant(0.6, 100, 1e-5).unwrap();
        assert!((v["epsilon"].as_f64().unwrap() - 218.86432075869025).abs() < 1e-9);
        assert!(cmd_accountant(0.0, 100, 1e-5).is_err());
    }
}
