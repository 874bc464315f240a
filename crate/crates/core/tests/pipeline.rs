use std::sync::atomic::AtomicBool;

use mlspike::harness::{emit, run_experiment, run_single, ExperimentConfig, ExperimentId, Sweep};
use mlspike::network::LayeredNetwork;
use mlspike::patterns::PatternSet;

fn small(id: ExperimentId, episodes: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(id);
    cfg.episodes = Some(episodes);
    cfg.runs = 2;
    cfg.sweep = Sweep::default();
    cfg
}

#[test]
fn runs_are_deterministic_and_seeded_per_run() {
    let mut cfg = small(ExperimentId::NoiseMap, 25);
    cfg.p = 3;
    let stop = AtomicBool::new(false);
    let a = run_single(&cfg, 1, &stop).unwrap();
    let b = run_single(&cfg, 1, &stop).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.network, b.network);
    assert_eq!(a.seed, cfg.base_seed + 1);
    let c = run_single(&cfg, 0, &stop).unwrap();
    assert_ne!(a.patterns, c.patterns);
}

#[test]
fn stop_flag_ends_runs_early() {
    let cfg = small(ExperimentId::Xor, 500);
    let stop = AtomicBool::new(true);
    let res = run_experiment(&cfg, &stop).unwrap();
    assert!(res.interrupted);
    assert!(res.conditions[0]
        .runs
        .iter()
        .all(|r| r.episodes_completed < 500));
}

#[test]
fn generalization_reports_train_and_test_accuracy() {
    let mut cfg = small(ExperimentId::Generalization, 10);
    cfg.runs = 1;
    cfg.n_h = 5;
    let res = run_experiment(&cfg, &AtomicBool::new(false)).unwrap();
    let run = &res.conditions[0].runs[0];
    assert!(run.train_accuracy.is_some());
    assert!(run.test_accuracy.is_some());
    assert_eq!(run.patterns.len(), 150);
}

#[test]
fn emitted_snapshots_reload() {
    let cfg = small(ExperimentId::SpatioTemporal, 5);
    let res = run_experiment(&cfg, &AtomicBool::new(false)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit(&res, dir.path()).unwrap();
    assert_eq!(files.curves.len(), 2);
    let cond = dir.path().join(&res.conditions[0].condition.label);
    let net = LayeredNetwork::load(&cond.join("network_run0.json")).unwrap();
    assert_eq!(net, res.conditions[0].runs[0].network);
    let pats = PatternSet::load(&cond.join("patterns_run1.json")).unwrap();
    assert_eq!(pats, res.conditions[0].runs[1].patterns);
    assert_eq!(pats.n_outputs(), 3);
}

#[test]
fn sweeps_expand_to_labelled_conditions() {
    let mut cfg = small(ExperimentId::Capacity, 3);
    cfg.runs = 1;
    cfg.p = 10;
    cfg.sweep = Sweep {
        n_h: vec![4, 6],
        n_s: vec![1, 2],
        ..Sweep::default()
    };
    let res = run_experiment(&cfg, &AtomicBool::new(false)).unwrap();
    let labels: Vec<&str> = res
        .conditions
        .iter()
        .map(|c| c.condition.label.as_str())
        .collect();
    assert_eq!(labels, ["nh-4_ns-1", "nh-4_ns-2", "nh-6_ns-1", "nh-6_ns-2"]);
    for c in &res.conditions {
        assert_eq!(c.runs[0].network.config.n_h, c.condition.config.n_h);
    }
}
