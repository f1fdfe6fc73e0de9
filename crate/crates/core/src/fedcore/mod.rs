//! Synchronous federated rounds: broadcast, local training, privacy
//! plumbing, and the FedAvg / FedProx / FedAdam server updates. The
//! centralized baseline runs through the same code as a single pooled
//! client.

mod experiment;
mod validation;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use experiment::{
    config_hash, milestones, run_experiment, run_experiment_until, ClientSummary, ExperimentOutcome, FinalMetrics,
    Milestone, PrivacySummary, RunManifest, RunSpec, GLOBAL_CSV_HEADER, ROUNDS_CSV_HEADER, VAL_PAGES_CSV_HEADER,
};
pub use validation::{evaluate_crops, validation_crops, PageScore, ValCrop, ValSummary};

use crate::dpcore::{add_central_noise, DpConfig, PrivacyLedger};
use crate::rng::derive_seed;
use crate::secagg::{clip_update, masked_sum, submit, PairwiseSeeds};
use crate::segnet::{local_train, LocalStats, LocalTrainOptions, OptState, PageData, ParamVec, SegNet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    FedAvg,
    FedProx,
    FedAdam,
}

impl Aggregator {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregator::FedAvg => "fedavg",
            Aggregator::FedProx => "fedprox",
            Aggregator::FedAdam => "fedadam",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Federated,
    /// One model trained on the pooled training pages of every client.
    Centralized,
}

/// Server-side Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedAdamConfig {
    pub server_lr: f64,
    pub betas: (f64, f64),
    /// Added to `√v̂` in the denominator.
    pub tau: f64,
}

impl Default for FedAdamConfig {
    fn default() -> Self {
        Self {
            server_lr: 1e-2,
            betas: (0.9, 0.99),
            tau: 1e-3,
        }
    }
}

impl FedAdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.server_lr > 0.0) || !self.server_lr.is_finite() {
            return Err(Error::invalid("server_lr", "must be finite and > 0"));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::invalid("betas", "must lie in [0, 1)"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub mode: TrainMode,
    pub aggregator: Aggregator,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Proximal weight, used only by FedProx.
    pub prox_mu: f64,
    pub k_min: usize,
    /// Each client joins a round independently with this probability.
    pub participation: f64,
    /// Extra attempts allowed for an aborted round.
    pub max_retries: usize,
    pub fedadam: FedAdamConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Federated,
            aggregator: Aggregator::FedAvg,
            rounds: 100,
            local_epochs: 1,
            prox_mu: 0.01,
            k_min: crate::secagg::DEFAULT_K_MIN,
            participation: 1.0,
            max_retries: 3,
            fedadam: FedAdamConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be positive"));
        }
        if self.local_epochs == 0 {
            return Err(Error::invalid("local_epochs", "must be positive"));
        }
        if !(self.prox_mu >= 0.0) || !self.prox_mu.is_finite() {
            return Err(Error::invalid("prox_mu", "must be finite and >= 0"));
        }
        if self.k_min == 0 {
            return Err(Error::invalid("k_min", "must be positive"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::invalid("participation", "must lie in (0, 1]"));
        }
        self.fedadam.validate()
    }
}

/// Secure aggregation and central DP switches. Clipping uses `dp.clip`
/// whenever either is on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    pub secagg: bool,
    pub dp: DpConfig,
}

impl PrivacyConfig {
    pub fn active(&self) -> bool {
        self.secagg || self.dp.enabled
    }

    pub fn validate(&self) -> Result<()> {
        self.dp.validate()
    }
}

/// One round's participants and normalized weights `n_k / N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub round: u64,
    pub participants: Vec<u32>,
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
    pub local_epochs: usize,
    pub aggregator: Aggregator,
    pub k_min: usize,
}

impl RoundPlan {
    /// Fails with `ThresholdNotMet` below `k_min` participants.
    pub fn new(
        round: u64,
        participants: Vec<u32>,
        counts: Vec<usize>,
        local_epochs: usize,
        aggregator: Aggregator,
        k_min: usize,
    ) -> Result<Self> {
        if participants.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} counts", participants.len()),
                actual: counts.len().to_string(),
            });
        }
        if participants.len() < k_min {
            return Err(Error::ThresholdNotMet {
                got: participants.len(),
                required: k_min,
            });
        }
        if counts.iter().any(|&n| n == 0) {
            return Err(Error::EmptyClientData);
        }
        let total: usize = counts.iter().sum();
        let weights = counts.iter().map(|&n| n as f64 / total as f64).collect();
        Ok(Self {
            round,
            participants,
            counts,
            weights,
            local_epochs,
            aggregator,
            k_min,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub global: ParamVec,
    pub fedadam_m: ParamVec,
    pub fedadam_v: ParamVec,
    pub fedadam: FedAdamConfig,
    /// Server Adam steps taken so far.
    pub adam_step: u64,
    /// Rounds committed so far.
    pub round: u64,
}

impl ServerState {
    pub fn new(global: ParamVec, fedadam: FedAdamConfig) -> Self {
        Self {
            fedadam_m: global.zeros_like(),
            fedadam_v: global.zeros_like(),
            global,
            fedadam,
            adam_step: 0,
            round: 0,
        }
    }
}

/// Optimizer state a client keeps between the rounds it joins.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub opt: OptState,
    pub epochs_done: u64,
}

/// A client's training pages.
pub struct ClientData<'a, P> {
    pub name: String,
    pub pages: Vec<&'a P>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client: u32,
    pub name: String,
    pub n_k: usize,
    pub weight: f64,
    pub preclip_norm: f64,
    pub postclip_norm: f64,
    pub stats: LocalStats,
}

/// Log entry of one committed round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub attempt: u32,
    pub participants: Vec<u32>,
    pub clients: Vec<ClientRecord>,
    /// Norm of the applied change to the global parameters.
    pub aggregate_norm: f64,
    /// Standard deviation of the central noise, when added.
    pub noise_std: Option<f64>,
    pub wall_ms: f64,
}

/// Everything a round reads besides the mutable state.
pub struct RoundContext<'a, P> {
    pub net: &'a SegNet,
    pub clients: &'a [ClientData<'a, P>],
    pub local: LocalTrainOptions,
    pub prox_mu: f64,
    pub privacy: PrivacyConfig,
    pub pair_seeds: Option<&'a PairwiseSeeds>,
    pub run_seed: u64,
}

/// New values produced by a round; nothing is mutated until the caller
/// commits them.
pub struct RoundOutput {
    pub state: ServerState,
    pub clients: Vec<ClientState>,
    pub ledger: PrivacyLedger,
    pub record: RoundRecord,
}

/// Seed of client `k`'s data stream; retries of an aborted round draw
/// from fresh streams.
pub fn client_stream_seed(run_seed: u64, client: u32, attempt: u32) -> u64 {
    let base = if attempt == 0 {
        run_seed
    } else {
        derive_seed(run_seed, "retry", attempt as u64)
    };
    derive_seed(base, "client-stream", client as u64)
}

/// `global + weighted_sum`.
pub fn agg_fedavg(global: &ParamVec, weighted_sum: &ParamVec) -> Result<ParamVec> {
    global.add(weighted_sum)
}

/// One bias-corrected server Adam step on the pseudo-gradient `g`.
pub fn agg_fedadam(state: &ServerState, g: &ParamVec) -> Result<ServerState> {
    state.global.check_same_layout(g)?;
    let FedAdamConfig {
        server_lr,
        betas: (b1, b2),
        tau,
    } = state.fedadam;
    let mut next = state.clone();
    next.adam_step += 1;
    let t = next.adam_step as i32;
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    let m = next.fedadam_m.values_mut();
    for (m, &g) in m.iter_mut().zip(g.values()) {
        *m = b1 * *m + (1.0 - b1) * g;
    }
    let v = next.fedadam_v.values_mut();
    for (v, &g) in v.iter_mut().zip(g.values()) {
        *v = b2 * *v + (1.0 - b2) * g * g;
    }
    let (m, v) = (next.fedadam_m.values().to_vec(), next.fedadam_v.values());
    for ((p, m), v) in next.global.values_mut().iter_mut().zip(m).zip(v) {
        *p += server_lr * (m / c1) / ((v / c2).sqrt() + tau);
    }
    Ok(next)
}

/// `Σ w_k x_k`, accumulated in participant order.
fn weighted_sum(items: &[ParamVec], weights: &[f64]) -> Result<ParamVec> {
    let mut acc = items[0].zeros_like();
    for (x, &w) in items.iter().zip(weights) {
        acc.axpy(w, x)?;
    }
    Ok(acc)
}

/// Runs one synchronous round.
///
/// Privacy off: FedAvg and FedProx take `Σ w_k θ_k` directly, FedAdam
/// consumes `Σ w_k Δθ_k`. Privacy on: every `Δθ_k` is clipped, summed
/// (masked in the fixed-point ring when secure aggregation is on),
/// optionally noised, and FedAvg/FedProx add the result to the global
/// parameters.
pub fn run_round<P: PageData>(
    ctx: &RoundContext<'_, P>,
    state: &ServerState,
    clients: &[ClientState],
    plan: &RoundPlan,
    ledger: &PrivacyLedger,
    attempt: u32,
) -> Result<RoundOutput> {
    let start = Instant::now();
    if plan.participants.len() < plan.k_min {
        return Err(Error::RoundAborted {
            round: plan.round as usize,
            reason: format!("{} participants, {} required", plan.participants.len(), plan.k_min),
        });
    }
    let mut local = ctx.local;
    local.epochs = plan.local_epochs;
    local.prox_mu = if plan.aggregator == Aggregator::FedProx {
        ctx.prox_mu
    } else {
        0.0
    };
    let anchor = (local.prox_mu > 0.0).then_some(&state.global);

    let trained: Vec<(ParamVec, ClientState, LocalStats)> = plan
        .participants
        .par_iter()
        .map(|&k| {
            let data = ctx
                .clients
                .get(k as usize)
                .ok_or_else(|| Error::invalid("participants", format!("unknown client {k}")))?;
            let mut cs = clients[k as usize].clone();
            let (theta, stats) = local_train(
                ctx.net,
                &state.global,
                &mut cs.opt,
                &data.pages,
                &local,
                anchor,
                client_stream_seed(ctx.run_seed, k, attempt),
                cs.epochs_done,
            )?;
            cs.epochs_done += plan.local_epochs as u64;
            Ok((theta, cs, stats))
        })
        .collect::<Result<_>>()?;

    let deltas: Vec<ParamVec> = trained
        .iter()
        .map(|(t, _, _)| t.sub(&state.global))
        .collect::<Result<_>>()?;
    let mut records: Vec<ClientRecord> = plan
        .participants
        .iter()
        .zip(&trained)
        .zip(&deltas)
        .enumerate()
        .map(|(i, ((&k, (_, _, stats)), d))| ClientRecord {
            client: k,
            name: ctx.clients[k as usize].name.clone(),
            n_k: plan.counts[i],
            weight: plan.weights[i],
            preclip_norm: d.norm(),
            postclip_norm: d.norm(),
            stats: stats.clone(),
        })
        .collect();

    let mut ledger = ledger.clone();
    let mut noise_std = None;
    let aggregate_norm;
    let next = if !ctx.privacy.active() {
        match plan.aggregator {
            Aggregator::FedAvg | Aggregator::FedProx => {
                let thetas: Vec<ParamVec> = trained.iter().map(|(t, _, _)| t.clone()).collect();
                let global = weighted_sum(&thetas, &plan.weights)?;
                aggregate_norm = global.sub(&state.global)?.norm();
                ServerState {
                    global,
                    ..state.clone()
                }
            }
            Aggregator::FedAdam => {
                let g = weighted_sum(&deltas, &plan.weights)?;
                aggregate_norm = g.norm();
                agg_fedadam(state, &g)?
            }
        }
    } else {
        let clip = ctx.privacy.dp.clip;
        let layout = state.global.layout().clone();
        let mut g = if ctx.privacy.secagg {
            let seeds = ctx
                .pair_seeds
                .ok_or_else(|| Error::invalid("pair_seeds", "secure aggregation needs pairwise seeds"))?;
            let mut masked = Vec::with_capacity(deltas.len());
            for (i, d) in deltas.iter().enumerate() {
                let k = plan.participants[i];
                let (m, rep) = submit(k, plan.round, d, clip, plan.weights[i], &plan.participants, seeds)?;
                records[i].postclip_norm = rep.postclip_norm;
                masked.push(m);
            }
            masked_sum(&masked, plan.k_min).map_err(|e| Error::RoundAborted {
                round: plan.round as usize,
                reason: e.to_string(),
            })?
        } else {
            let mut clipped = Vec::with_capacity(deltas.len());
            for (i, d) in deltas.iter().enumerate() {
                let (c, rep) = clip_update(plan.participants[i], d, clip)?;
                records[i].postclip_norm = rep.postclip_norm;
                clipped.push(c);
            }
            weighted_sum(&clipped, &plan.weights)?.into_values()
        };
        if ctx.privacy.dp.enabled {
            add_central_noise(
                &mut g,
                &ctx.privacy.dp,
                &mut ledger,
                derive_seed(ctx.run_seed, "dp", attempt as u64),
                plan.round,
            )?;
            noise_std = Some(ctx.privacy.dp.noise_std());
        }
        let g = ParamVec::from_values(layout, g)?;
        aggregate_norm = g.norm();
        match plan.aggregator {
            Aggregator::FedAvg | Aggregator::FedProx => ServerState {
                global: agg_fedavg(&state.global, &g)?,
                ..state.clone()
            },
            Aggregator::FedAdam => agg_fedadam(state, &g)?,
        }
    };

    let mut out_clients = clients.to_vec();
    for (&k, (_, cs, _)) in plan.participants.iter().zip(trained) {
        out_clients[k as usize] = cs;
    }
    let state = ServerState {
        round: state.round + 1,
        ..next
    };
    Ok(RoundOutput {
        state,
        clients: out_clients,
        ledger,
        record: RoundRecord {
            round: plan.round,
            attempt,
            participants: plan.participants.clone(),
            clients: records,
            aggregate_norm,
            noise_std,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::segnet::Layout;

    fn pv(vals: &[f64]) -> ParamVec {
        let mut l = Layout::new();
        l.push("x", &[vals.len()]);
        ParamVec::from_values(Arc::new(l), vals.to_vec()).unwrap()
    }

    #[test]
    fn plan_weights_and_threshold() {
        let p = RoundPlan::new(
            0,
            vec![0, 1, 2, 3, 4],
            vec![6100, 4900, 4300, 3500, 3000],
            1,
            Aggregator::FedAvg,
            3,
        )
        .unwrap();
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p.weights[0] - 6100.0 / 21800.0).abs() < 1e-15);
        assert!(matches!(
            RoundPlan::new(0, vec![0, 1], vec![1, 1], 1, Aggregator::FedAvg, 3),
            Err(Error::ThresholdNotMet { got: 2, required: 3 })
        ));
    }

    #[test]
    fn fedavg_examples() {
        let g = pv(&[1.0, -2.0]);
        assert_eq!(agg_fedavg(&g, &pv(&[0.0, 0.0])).unwrap(), g);
        let ws = weighted_sum(&[pv(&[4.0]), pv(&[0.0])], &[0.25, 0.75]).unwrap();
        assert_eq!(agg_fedavg(&pv(&[0.0]), &ws).unwrap().values(), &[1.0]);
    }

    #[test]
    fn delta_and_theta_forms_agree() {
        let global = pv(&[0.3, -0.1, 0.7]);
        let thetas = [pv(&[0.5, 0.0, 0.6]), pv(&[0.1, -0.4, 0.9]), pv(&[0.2, 0.2, 0.2])];
        let w = [0.5, 0.3, 0.2];
        let theta_form = weighted_sum(&thetas, &w).unwrap();
        let deltas: Vec<ParamVec> = thetas.iter().map(|t| t.sub(&global).unwrap()).collect();
        let delta_form = agg_fedavg(&global, &weighted_sum(&deltas, &w).unwrap()).unwrap();
        for (a, b) in theta_form.values().iter().zip(delta_form.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        // Identical updates move the global by exactly that update.
        let d = pv(&[0.25, -0.5, 0.125]);
        let ws = weighted_sum(&[d.clone(), d.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(agg_fedavg(&global, &ws).unwrap(), global.add(&d).unwrap());
    }

    #[test]
    fn fedadam_examples() {
        let s = ServerState::new(pv(&[1.0, 1.0, 1.0]), FedAdamConfig::default());
        let z = agg_fedadam(&s, &pv(&[0.0; 3])).unwrap();
        assert_eq!(z.global, s.global);
        // First step: m̂ = g and v̂ = g², so each coordinate moves by lr·g/(|g| + τ).
        let g = pv(&[0.5, -2.0, 1e-4]);
        let n = agg_fedadam(&s, &g).unwrap();
        for (i, &gi) in g.values().iter().enumerate() {
            let want = 1.0 + 1e-2 * gi / (gi.abs() + 1e-3);
            assert!((n.global.values()[i] - want).abs() < 1e-15, "{i}");
        }
        // Zero betas and large tau: scaled FedAvg direction.
        let cfg = FedAdamConfig {
            server_lr: 1.0,
            betas: (0.0, 0.0),
            tau: 1e6,
        };
        let s = ServerState::new(pv(&[0.0, 0.0]), cfg);
        let n = agg_fedadam(&s, &pv(&[0.3, -0.2])).unwrap();
        assert!((n.global.values()[0] - 0.3e-6).abs() < 1e-12);
        assert!((n.global.values()[1] + 0.2e-6).abs() < 1e-12);
    }
}
