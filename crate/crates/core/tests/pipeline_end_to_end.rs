//! Tracking runs on generated sequences, from detections to scored
//! trajectories.

use std::sync::OnceLock;

use flowtrack::config::EngineConfig;
use flowtrack::cost_model::CostModel;
use flowtrack::experiment::{association_windows, train_affinity_model, train_cost_model};
use flowtrack::metrics::{evaluate, DEFAULT_IOU_MIN};
use flowtrack::pipeline::track_sequence;
use flowtrack::synth::{generate, ScenarioConfig, SyntheticValidator};
use flowtrack::tracklets::AffinityModel;

/// Models trained once on two noisy sequences; noiseless data has no true
/// links to learn from.
fn models() -> &'static (AffinityModel, CostModel) {
    static MODELS: OnceLock<(AffinityModel, CostModel)> = OnceLock::new();
    MODELS.get_or_init(|| {
        let cfg = EngineConfig::default();
        let seqs: Vec<_> = [1, 2]
            .map(|seed| {
                generate(&ScenarioConfig {
                    n_identities: 10,
                    frames: 150,
                    seed,
                    ..ScenarioConfig::default()
                })
                .unwrap()
            })
            .into();
        let bundles: Vec<_> = seqs.iter().map(|s| &s.bundle).collect();
        let (affinity, _) = train_affinity_model(&bundles, &cfg).unwrap();
        let mut windows = Vec::new();
        for b in bundles {
            windows.extend(association_windows(b, &affinity, &cfg).unwrap());
        }
        let (model, _) = train_cost_model(&windows, &[], &cfg).unwrap();
        (affinity, model)
    })
}

#[test]
fn noiseless_sequences_are_tracked_perfectly() {
    let (affinity, model) = models();
    let cfg = EngineConfig::default();
    for seed in [3, 4, 5] {
        let test = generate(&ScenarioConfig::noiseless(6, 90, seed)).unwrap();
        let v = SyntheticValidator::new(&test);
        let r = track_sequence(&test.bundle.detections, affinity, model, &cfg, Some(&v)).unwrap();
        let e = evaluate(&r.trajectories, test.gt(), DEFAULT_IOU_MIN).unwrap();
        assert_eq!((e.mota, e.fp, e.fn_, e.ids), (1.0, 0, 0, 0), "seed {seed}");
    }
}

#[test]
fn single_walker_gives_one_trajectory() {
    let (affinity, model) = models();
    let test = generate(&ScenarioConfig::noiseless(1, 120, 9)).unwrap();
    let r = track_sequence(&test.bundle.detections, affinity, model, &EngineConfig::default(), None).unwrap();
    assert_eq!(r.trajectories.len(), 1);
    assert_eq!(r.trajectories[0].len(), test.gt()[0].len());
    assert!(r.trajectories[0].entries.iter().all(|e| !e.interpolated));
}

#[test]
fn empty_detections_give_no_trajectories() {
    let cfg = EngineConfig::default();
    let model = CostModel::zeros(cfg.beta, cfg.gamma).unwrap();
    let r = track_sequence(&[], &AffinityModel::new(0), &model, &cfg, None).unwrap();
    assert!(r.trajectories.is_empty() && r.tracklets.is_empty());
}

#[test]
fn noisy_tracking_is_deterministic_and_well_formed() {
    let (affinity, model) = models();
    let cfg = EngineConfig::default();
    let test = generate(&ScenarioConfig {
        n_identities: 8,
        frames: 120,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let a = track_sequence(&test.bundle.detections, affinity, model, &cfg, None).unwrap();
    let b = track_sequence(&test.bundle.detections, affinity, model, &cfg, None).unwrap();
    assert_eq!(a.trajectories, b.trajectories);

    let mut used = vec![false; a.tracklets.len()];
    for chain in &a.chains {
        for &id in chain {
            assert!(!std::mem::replace(&mut used[id], true), "tracklet {id} in two chains");
        }
    }
    for t in &a.trajectories {
        // Interpolated boxes only sit strictly inside a trajectory.
        assert!(!t.entries.first().unwrap().interpolated && !t.entries.last().unwrap().interpolated);
        assert!(t.entries.windows(2).all(|w| w[0].frame < w[1].frame));
    }
    let e = evaluate(&a.trajectories, test.gt(), DEFAULT_IOU_MIN).unwrap();
    assert!(e.mota > 0.8, "MOTA {}", e.mota);
}
