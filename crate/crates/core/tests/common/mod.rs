#![allow(dead_code)]

use std::fs;
use std::path::Path;

use ecgfed::fedcore::{Aggregator, RunSpec, TrainMode};
use ecgfed::segnet::{AdamWConfig, LrSchedule, NetConfig};
use ecgfed::synthgen::{build_in_memory, ClientProfile, DatasetSpec, PageSet};

/// `n_clients` built-in sites with `pages` pages each, a quarter held out.
pub fn toy_pages(n_clients: usize, pages: usize) -> PageSet {
    let profiles = ClientProfile::builtins()
        .into_iter()
        .take(n_clients)
        .map(|mut p| {
            p.n_pages = pages;
            p
        })
        .collect();
    let spec = DatasetSpec {
        seed: 11,
        profiles,
        val_fraction: 0.25,
        ..DatasetSpec::default()
    };
    build_in_memory(&spec).unwrap().1
}

/// A tiny network and short schedule for fast federated runs.
pub fn toy_spec(aggregator: Aggregator, rounds: usize) -> RunSpec {
    let mut s = RunSpec::default();
    s.seed = 5;
    s.net = NetConfig {
        depth: 2,
        channels: vec![2, 4],
        patch: 16,
        batch: 2,
        ..NetConfig::default()
    };
    s.optimizer = AdamWConfig {
        schedule: LrSchedule {
            peak: 1e-2,
            warmup: 2,
            floor: 1e-4,
            total_steps: 200,
        },
        ..AdamWConfig::default()
    };
    s.federation.mode = TrainMode::Federated;
    s.federation.aggregator = aggregator;
    s.federation.rounds = rounds;
    s.val_crops_per_page = 1;
    s.page_log_rounds = 2;
    s
}

pub fn cfg_json(spec: &RunSpec) -> serde_json::Value {
    serde_json::to_value(spec).unwrap()
}

pub fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
