//! Whole runs: the round loop, per-round logs, milestone checkpoints,
//! crash-safe resume and the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::validation::{evaluate_crops, validation_crops, PageScore, ValSummary};
use super::{
    run_round, Aggregator, ClientData, ClientState, FederationConfig, PrivacyConfig, RoundContext, RoundPlan,
    RoundRecord, ServerState, TrainMode,
};
use crate::dpcore::{compose_and_convert, EpsilonReport, PrivacyLedger};
use crate::rng::{derive_seed, sim_rng, unit_closed_open};
use crate::secagg::PairwiseSeeds;
use crate::segnet::{AdamWConfig, LocalTrainOptions, NetConfig, OptState, ParamVec, SegNet};
use crate::synthgen::{PageSet, StoredPage};
use crate::{Error, Result};

pub const ROUNDS_CSV_HEADER: &str = "# ecgfed rounds v1\n\
round,client,n_k,weight,preclip_norm,postclip_norm,val_dice,train_loss,steps,clipped_steps,lr\n";
pub const VAL_PAGES_CSV_HEADER: &str = "# ecgfed val_pages v1\nround,record_id,client,dice,iou,bce\n";
/// Followed by one `val_dice_<client>` column per client.
pub const GLOBAL_CSV_HEADER: &str = "# ecgfed global v1\nround,attempt,participants,aggregate_norm,noise_std,val_dice";
const ABORTS_CSV_HEADER: &str = "# ecgfed aborts v1\nround,attempt,reason\n";
const TIMING_CSV_HEADER: &str = "# ecgfed timing v1\nround,wall_ms\n";

const LOGS: [&str; 5] = ["rounds.csv", "global.csv", "val_pages.csv", "aborts.csv", "timing.csv"];

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub seed: u64,
    pub net: NetConfig,
    pub optimizer: AdamWConfig,
    pub local: LocalTrainOptions,
    pub federation: FederationConfig,
    pub privacy: PrivacyConfig,
    pub val_crops_per_page: usize,
    /// Per-page scores are logged for this many final rounds.
    pub page_log_rounds: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            net: NetConfig::default(),
            optimizer: AdamWConfig::default(),
            local: LocalTrainOptions::default(),
            federation: FederationConfig::default(),
            privacy: PrivacyConfig::default(),
            val_crops_per_page: 2,
            page_log_rounds: 5,
        }
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.optimizer.validate()?;
        self.local.validate()?;
        self.federation.validate()?;
        self.privacy.validate()?;
        if self.val_crops_per_page == 0 {
            return Err(Error::invalid("val_crops_per_page", "must be positive"));
        }
        if self.federation.mode == TrainMode::Centralized && self.privacy.active() {
            return Err(Error::Config("privacy applies to federated runs only".into()));
        }
        Ok(())
    }
}

/// Checkpoint rounds: 10, 20, 40 and the last round.
pub fn milestones(rounds: usize) -> Vec<usize> {
    let mut m: Vec<usize> = [10, 20, 40].into_iter().filter(|&r| r < rounds).collect();
    m.push(rounds);
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub name: String,
    pub train_pages: usize,
    pub val_pages: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySummary {
    pub secagg: bool,
    pub dp: bool,
    pub sigma: f64,
    pub clip: f64,
    pub rounds_applied: usize,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    pub round: usize,
    pub global_dice: f64,
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub global_dice: f64,
    pub client_dice: BTreeMap<String, f64>,
}

/// Written once, after the last round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub mode: TrainMode,
    pub aggregator: Aggregator,
    pub rounds: usize,
    pub num_params: usize,
    pub clients: Vec<ClientSummary>,
    pub privacy: PrivacySummary,
    pub aborted_attempts: usize,
    pub milestones: Vec<Milestone>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    /// Validation summary after each round.
    pub history: Vec<ValSummary>,
    pub final_params: ParamVec,
}

/// Progress saved after each committed round.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Committed {
    round: u64,
    adam_step: u64,
    client_steps: Vec<u64>,
    client_epochs: Vec<u64>,
    ledger: PrivacyLedger,
    log_lengths: BTreeMap<String, u64>,
    history: Vec<ValSummary>,
    aborted_attempts: usize,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

fn file_len(path: &Path) -> Result<u64> {
    Ok(fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

fn rename(from: &Path, to: &Path) -> Result<()> {
    fs::rename(from, to).map_err(|e| Error::io(from, e))
}

/// Writes `state.tmp/`, then swaps it in for `state/`.
fn commit_state(out: &Path, server: &ServerState, clients: &[ClientState], meta: &Committed) -> Result<()> {
    let tmp = out.join("state.tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    server.global.write_checkpoint(tmp.join("global.ckpt"))?;
    server.fedadam_m.write_checkpoint(tmp.join("fedadam_m.ckpt"))?;
    server.fedadam_v.write_checkpoint(tmp.join("fedadam_v.ckpt"))?;
    for (k, c) in clients.iter().enumerate() {
        c.opt.m.write_checkpoint(tmp.join(format!("client{k}_m.ckpt")))?;
        c.opt.v.write_checkpoint(tmp.join(format!("client{k}_v.ckpt")))?;
    }
    write_file(&tmp.join("state.json"), serde_json::to_string_pretty(meta)?.as_bytes())?;
    let state = out.join("state");
    let old = out.join("state.old");
    if state.exists() {
        rename(&state, &old)?;
    }
    rename(&tmp, &state)?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(())
}

fn load_state(
    out: &Path,
    net: &SegNet,
    spec: &RunSpec,
    n_clients: usize,
) -> Result<Option<(ServerState, Vec<ClientState>, Committed)>> {
    let mut dir = out.join("state");
    if !dir.exists() {
        // A crash between the two renames leaves only the previous state.
        dir = out.join("state.old");
        if !dir.exists() {
            return Ok(None);
        }
    }
    let path = dir.join("state.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Committed = serde_json::from_str(&text)?;
    if meta.client_steps.len() != n_clients {
        return Err(Error::Format {
            kind: "run state",
            path,
            reason: "client count differs from the dataset".into(),
        });
    }
    let read = |name: &str| -> Result<ParamVec> {
        let p = ParamVec::read_checkpoint(dir.join(name))?;
        if **p.layout() != **net.layout() {
            return Err(Error::Format {
                kind: "checkpoint",
                path: dir.join(name),
                reason: "layout differs from the configured network".into(),
            });
        }
        ParamVec::from_values(net.layout().clone(), p.into_values())
    };
    let server = ServerState {
        global: read("global.ckpt")?,
        fedadam_m: read("fedadam_m.ckpt")?,
        fedadam_v: read("fedadam_v.ckpt")?,
        fedadam: spec.federation.fedadam,
        adam_step: meta.adam_step,
        round: meta.round,
    };
    let mut clients = Vec::with_capacity(n_clients);
    for k in 0..n_clients {
        clients.push(ClientState {
            opt: OptState {
                step: meta.client_steps[k],
                m: read(&format!("client{k}_m.ckpt"))?,
                v: read(&format!("client{k}_v.ckpt"))?,
                cfg: spec.optimizer,
            },
            epochs_done: meta.client_epochs[k],
        });
    }
    for name in LOGS {
        let p = out.join(name);
        let want = meta.log_lengths.get(name).copied().unwrap_or(0);
        let f = OpenOptions::new().write(true).open(&p).map_err(|e| Error::io(&p, e))?;
        f.set_len(want).map_err(|e| Error::io(&p, e))?;
    }
    Ok(Some((server, clients, meta)))
}

fn participants(spec: &RunSpec, n: usize, round: u64, attempt: u32) -> Vec<u32> {
    let f = spec.federation.participation;
    if f >= 1.0 {
        return (0..n as u32).collect();
    }
    let mut rng = sim_rng(spec.seed, "participation", (round << 16) | attempt as u64);
    (0..n as u32).filter(|_| unit_closed_open(&mut rng) < f).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs (or resumes) a training run in `out`.
///
/// `out` must exist. If it holds committed state from an earlier run with
/// the same config, training continues after the last committed round;
/// logs are truncated to their committed lengths first.
pub fn run_experiment(
    spec: &RunSpec,
    pages: &PageSet,
    out: &Path,
    resolved_config: &serde_json::Value,
) -> Result<ExperimentOutcome> {
    Ok(run_experiment_until(spec, pages, out, resolved_config, None)?.expect("no early stop"))
}

/// Like [`run_experiment`], but returns `None` once `stop_after` rounds
/// are committed and the run is not yet complete.
pub fn run_experiment_until(
    spec: &RunSpec,
    pages: &PageSet,
    out: &Path,
    resolved_config: &serde_json::Value,
    stop_after: Option<usize>,
) -> Result<Option<ExperimentOutcome>> {
    spec.validate()?;
    let net = SegNet::new(spec.net.clone())?;
    let fed = &spec.federation;
    let pooled: Vec<&StoredPage> = pages.clients.iter().flat_map(|c| c.train.iter()).collect();
    let clients: Vec<ClientData<'_, StoredPage>> = match fed.mode {
        TrainMode::Federated => pages
            .clients
            .iter()
            .map(|c| ClientData {
                name: c.name.clone(),
                pages: c.train.iter().collect(),
            })
            .collect(),
        TrainMode::Centralized => vec![ClientData {
            name: "pooled".into(),
            pages: pooled,
        }],
    };
    if clients.iter().any(|c| c.pages.is_empty()) {
        return Err(Error::EmptyClientData);
    }
    let (aggregator, k_min) = match fed.mode {
        TrainMode::Federated => (fed.aggregator, fed.k_min),
        TrainMode::Centralized => (Aggregator::FedAvg, 1),
    };
    if fed.mode == TrainMode::Federated && fed.participation >= 1.0 && clients.len() < k_min {
        return Err(Error::Config(format!(
            "{} clients can never meet k_min = {k_min}",
            clients.len()
        )));
    }
    let client_ids: Vec<u32> = (0..clients.len() as u32).collect();
    let pair_seeds = spec
        .privacy
        .secagg
        .then(|| PairwiseSeeds::generate(derive_seed(spec.seed, "secagg-seeds", 0), &client_ids));
    let crops = validation_crops(pages, spec.net.patch, spec.val_crops_per_page);
    let n_val_clients = pages.clients.len();
    let cfg_hash = config_hash(resolved_config);

    let saved = out.join("config.json");
    if let Ok(text) = fs::read_to_string(&saved) {
        let prev: serde_json::Value = serde_json::from_str(&text)?;
        if config_hash(&prev) != cfg_hash {
            return Err(Error::Config(format!(
                "{} holds a run with a different config",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;
    let (mut server, mut client_states, mut meta) = match load_state(out, &net, spec, clients.len())? {
        Some(s) => s,
        None => {
            let mut global_header = GLOBAL_CSV_HEADER.to_string();
            for c in &pages.clients {
                global_header.push_str(&format!(",val_dice_{}", c.name));
            }
            global_header.push('\n');
            let headers = [
                ROUNDS_CSV_HEADER,
                global_header.as_str(),
                VAL_PAGES_CSV_HEADER,
                ABORTS_CSV_HEADER,
                TIMING_CSV_HEADER,
            ];
            let mut log_lengths = BTreeMap::new();
            for (name, h) in LOGS.iter().zip(headers) {
                write_file(&out.join(name), h.as_bytes())?;
                log_lengths.insert(name.to_string(), h.len() as u64);
            }
            write_file(
                &out.join("config.json"),
                serde_json::to_string_pretty(resolved_config)?.as_bytes(),
            )?;
            let global = net.init(derive_seed(spec.seed, "init", 0));
            let client_states: Vec<ClientState> = clients
                .iter()
                .map(|_| ClientState {
                    opt: OptState::new(&global, spec.optimizer),
                    epochs_done: 0,
                })
                .collect();
            let meta = Committed {
                round: 0,
                adam_step: 0,
                client_steps: vec![0; clients.len()],
                client_epochs: vec![0; clients.len()],
                ledger: PrivacyLedger::default(),
                log_lengths,
                history: Vec::new(),
                aborted_attempts: 0,
            };
            (ServerState::new(global, fed.fedadam), client_states, meta)
        }
    };

    let ctx = RoundContext {
        net: &net,
        clients: &clients,
        local: spec.local,
        prox_mu: fed.prox_mu,
        privacy: spec.privacy,
        pair_seeds: pair_seeds.as_ref(),
        run_seed: spec.seed,
    };
    let counts: Vec<usize> = clients.iter().map(|c| c.pages.len()).collect();
    let stones = milestones(fed.rounds);
    let first_logged = fed.rounds.saturating_sub(spec.page_log_rounds);

    for r in meta.round as usize..fed.rounds {
        if stop_after.is_some_and(|n| r >= n) {
            return Ok(None);
        }
        let mut committed = None;
        let mut abort_lines = String::new();
        for attempt in 0..=fed.max_retries as u32 {
            let who = participants(spec, clients.len(), r as u64, attempt);
            let n: Vec<usize> = who.iter().map(|&k| counts[k as usize]).collect();
            let result = RoundPlan::new(r as u64, who, n, fed.local_epochs, aggregator, k_min)
                .and_then(|plan| run_round(&ctx, &server, &client_states, &plan, &meta.ledger, attempt));
            match result {
                Ok(o) => {
                    committed = Some(o);
                    break;
                }
                Err(e @ (Error::ThresholdNotMet { .. } | Error::RoundAborted { .. })) => {
                    meta.aborted_attempts += 1;
                    abort_lines.push_str(&format!("{},{},\"{}\"\n", r + 1, attempt, e));
                }
                Err(e) => return Err(e),
            }
        }
        if !abort_lines.is_empty() {
            append(&out.join("aborts.csv"), &abort_lines)?;
        }
        let o = committed.ok_or_else(|| Error::RoundAborted {
            round: r + 1,
            reason: format!("no attempt met k_min = {k_min} within {} retries", fed.max_retries),
        })?;
        let scores = evaluate_crops(&net, &o.state.global, &crops)?;
        let summary = ValSummary::from_scores(&scores, n_val_clients)?;
        log_round(
            out,
            r + 1,
            &o.record,
            &summary,
            &scores,
            r >= first_logged,
            &pages.clients,
            fed.mode,
        )?;
        if stones.contains(&(r + 1)) {
            o.state
                .global
                .write_checkpoint(out.join("checkpoints").join(format!("round_{:03}.ckpt", r + 1)))?;
        }
        server = o.state;
        client_states = o.clients;
        meta.round = server.round;
        meta.adam_step = server.adam_step;
        meta.client_steps = client_states.iter().map(|c| c.opt.step).collect();
        meta.client_epochs = client_states.iter().map(|c| c.epochs_done).collect();
        meta.ledger = o.ledger;
        meta.history.push(summary);
        for name in LOGS {
            meta.log_lengths.insert(name.to_string(), file_len(&out.join(name))?);
        }
        commit_state(out, &server, &client_states, &meta)?;
    }

    let ledger = &meta.ledger;
    let eps: Option<EpsilonReport> = if spec.privacy.dp.enabled && ledger.rounds_applied > 0 {
        Some(compose_and_convert(ledger, spec.privacy.dp.delta)?)
    } else {
        None
    };
    let last = meta.history.last().expect("at least one round");
    let manifest = RunManifest {
        version: 1,
        code_version: format!("ecgfed {}", env!("CARGO_PKG_VERSION")),
        config_hash: cfg_hash,
        config: resolved_config.clone(),
        seed: spec.seed,
        mode: fed.mode,
        aggregator,
        rounds: fed.rounds,
        num_params: net.num_params(),
        clients: pages
            .clients
            .iter()
            .map(|c| ClientSummary {
                name: c.name.clone(),
                train_pages: c.train.len(),
                val_pages: c.val.len(),
            })
            .collect(),
        privacy: PrivacySummary {
            secagg: spec.privacy.secagg,
            dp: spec.privacy.dp.enabled,
            sigma: spec.privacy.dp.sigma,
            clip: spec.privacy.dp.clip,
            rounds_applied: ledger.rounds_applied,
            epsilon: eps.map(|e| e.epsilon),
            delta: eps.map(|e| e.delta),
            alpha: eps.map(|e| e.alpha),
        },
        aborted_attempts: meta.aborted_attempts,
        milestones: stones
            .iter()
            .map(|&m| Milestone {
                round: m,
                global_dice: meta.history[m - 1].global_dice,
                checkpoint: format!("checkpoints/round_{m:03}.ckpt"),
            })
            .collect(),
        final_metrics: FinalMetrics {
            global_dice: last.global_dice,
            client_dice: pages
                .clients
                .iter()
                .zip(&last.client_dice)
                .map(|(c, &d)| (c.name.clone(), d))
                .collect(),
        },
    };
    write_file(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(Some(ExperimentOutcome {
        manifest,
        history: meta.history,
        final_params: server.global,
    }))
}

#[allow(clippy::too_many_arguments)]
fn log_round(
    out: &Path,
    round: usize,
    rec: &RoundRecord,
    summary: &ValSummary,
    scores: &[PageScore],
    log_pages: bool,
    val_clients: &[crate::synthgen::ClientPages],
    mode: TrainMode,
) -> Result<()> {
    let mut rows = String::new();
    for c in &rec.clients {
        // A federated client is scored on its own validation pages; the
        // pooled client on all of them.
        let val = match mode {
            TrainMode::Federated => summary.client_dice.get(c.client as usize).copied(),
            TrainMode::Centralized => Some(summary.global_dice),
        };
        rows.push_str(&format!(
            "{round},{},{},{},{},{},{},{},{},{},{}\n",
            c.name,
            c.n_k,
            c.weight,
            c.preclip_norm,
            c.postclip_norm,
            fmt_opt(val),
            c.stats.mean_loss,
            c.stats.steps,
            c.stats.clipped_steps,
            c.stats.final_lr
        ));
    }
    append(&out.join("rounds.csv"), &rows)?;

    let mut g = format!(
        "{round},{},{},{},{},{}",
        rec.attempt,
        rec.participants.len(),
        rec.aggregate_norm,
        fmt_opt(rec.noise_std),
        summary.global_dice
    );
    for d in &summary.client_dice {
        g.push_str(&format!(",{d}"));
    }
    g.push('\n');
    append(&out.join("global.csv"), &g)?;

    if log_pages {
        let mut rows = String::new();
        for s in scores {
            let m = s.counts.metrics();
            rows.push_str(&format!(
                "{round},{},{},{},{},{}\n",
                s.record_id, val_clients[s.client].name, m.dice, m.iou, s.bce
            ));
        }
        append(&out.join("val_pages.csv"), &rows)?;
    }
    append(&out.join("timing.csv"), &format!("{round},{:012.3}\n", rec.wall_ms))
}
