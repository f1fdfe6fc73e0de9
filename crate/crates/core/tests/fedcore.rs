mod common;

use common::{bits, cfg_json, read, toy_pages, toy_spec};
use ecgfed::dpcore::epsilon_for;
use ecgfed::fedcore::{run_experiment, run_experiment_until, Aggregator, RunManifest, TrainMode};
use ecgfed::Error;
use tempfile::tempdir;

#[test]
fn fedprox_without_penalty_is_fedavg() {
    let pages = toy_pages(3, 4);
    let avg = toy_spec(Aggregator::FedAvg, 10);
    let mut prox = toy_spec(Aggregator::FedProx, 10);
    prox.federation.prox_mu = 0.0;
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let ra = run_experiment(&avg, &pages, a.path(), &cfg_json(&avg)).unwrap();
    let rb = run_experiment(&prox, &pages, b.path(), &cfg_json(&prox)).unwrap();
    assert_eq!(bits(ra.final_params.values()), bits(rb.final_params.values()));
    for f in ["rounds.csv", "global.csv", "val_pages.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    // A positive penalty changes the trajectory.
    prox.federation.prox_mu = 1.0;
    let c = tempdir().unwrap();
    let rc = run_experiment(&prox, &pages, c.path(), &cfg_json(&prox)).unwrap();
    assert_ne!(bits(ra.final_params.values()), bits(rc.final_params.values()));
}

#[test]
fn single_client_federation_is_centralized_training() {
    let pages = toy_pages(1, 8);
    let mut fed = toy_spec(Aggregator::FedAvg, 4);
    fed.federation.k_min = 1;
    fed.federation.local_epochs = 2;
    let mut cen = fed.clone();
    cen.federation.mode = TrainMode::Centralized;
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let ra = run_experiment(&fed, &pages, a.path(), &cfg_json(&fed)).unwrap();
    let rb = run_experiment(&cen, &pages, b.path(), &cfg_json(&cen)).unwrap();
    assert_eq!(bits(ra.final_params.values()), bits(rb.final_params.values()));
    assert_eq!(read(a.path(), "global.csv"), read(b.path(), "global.csv"));
}

#[test]
fn reruns_are_byte_identical_and_resume_matches() {
    let pages = toy_pages(3, 4);
    let spec = toy_spec(Aggregator::FedAdam, 6);
    let cfg = cfg_json(&spec);
    let (a, b, c) = (tempdir().unwrap(), tempdir().unwrap(), tempdir().unwrap());
    run_experiment(&spec, &pages, a.path(), &cfg).unwrap();
    run_experiment(&spec, &pages, b.path(), &cfg).unwrap();
    assert!(run_experiment_until(&spec, &pages, c.path(), &cfg, Some(3))
        .unwrap()
        .is_none());
    assert!(!c.path().join("manifest.json").exists());
    run_experiment(&spec, &pages, c.path(), &cfg).unwrap();
    for f in [
        "rounds.csv",
        "global.csv",
        "val_pages.csv",
        "aborts.csv",
        "manifest.json",
        "checkpoints/round_006.ckpt",
    ] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
        assert_eq!(read(a.path(), f), read(c.path(), f), "{f}");
    }
}

#[test]
fn resume_refuses_a_different_config() {
    let pages = toy_pages(3, 4);
    let spec = toy_spec(Aggregator::FedAvg, 3);
    let d = tempdir().unwrap();
    run_experiment_until(&spec, &pages, d.path(), &cfg_json(&spec), Some(1)).unwrap();
    let mut other = spec.clone();
    other.seed += 1;
    assert!(matches!(
        run_experiment(&other, &pages, d.path(), &cfg_json(&other)),
        Err(Error::Config(_))
    ));
}

#[test]
fn private_run_reports_accountant_epsilon() {
    let pages = toy_pages(3, 4);
    let mut spec = toy_spec(Aggregator::FedAvg, 4);
    spec.privacy.secagg = true;
    spec.privacy.dp.enabled = true;
    let d = tempdir().unwrap();
    let out = run_experiment(&spec, &pages, d.path(), &cfg_json(&spec)).unwrap();
    let m = RunManifest::read(d.path().join("manifest.json")).unwrap();
    assert_eq!(m, out.manifest);
    let want = epsilon_for(0.6, 4, 1e-5).unwrap();
    assert_eq!(m.privacy.rounds_applied, 4);
    assert!((m.privacy.epsilon.unwrap() - want.epsilon).abs() < 1e-9);
    assert_eq!(m.privacy.delta, Some(1e-5));
    let rounds = String::from_utf8(read(d.path(), "rounds.csv")).unwrap();
    for line in rounds.lines().skip(2) {
        let post: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!(post <= 1.0 + 1e-12, "{line}");
    }
}

#[test]
fn rounds_below_threshold_abort_then_fail() {
    let pages = toy_pages(3, 4);
    let mut spec = toy_spec(Aggregator::FedAvg, 2);
    spec.federation.participation = 0.01;
    spec.federation.max_retries = 2;
    let d = tempdir().unwrap();
    let err = run_experiment(&spec, &pages, d.path(), &cfg_json(&spec)).unwrap_err();
    assert!(matches!(err, Error::RoundAborted { round: 1, .. }), "{err}");
    let aborts = String::from_utf8(read(d.path(), "aborts.csv")).unwrap();
    assert_eq!(aborts.lines().count(), 2 + 3);
    assert!(!d.path().join("state").exists());
}
