//! Sequences, results and models survive a trip through the file system.

use flowtrack::config::EngineConfig;
use flowtrack::cost_model::CostModel;
use flowtrack::io::{load_config, read_results, read_sequence, write_config, write_results, write_sequence};
use flowtrack::synth::{generate, ScenarioConfig};
use flowtrack::tracklets::AffinityModel;
use flowtrack::trainer::Weighting;
use flowtrack::Detection;
use tempfile::TempDir;

fn sorted(mut d: Vec<Detection>) -> Vec<Detection> {
    d.sort_by(|a, b| {
        (a.frame, a.bbox.x, a.bbox.y)
            .partial_cmp(&(b.frame, b.bbox.x, b.bbox.y))
            .unwrap()
    });
    d
}

#[test]
fn sequence_directory_round_trip() {
    let seq = generate(&ScenarioConfig {
        n_identities: 5,
        frames: 60,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("seq");
    write_sequence(&seq.bundle, &dir).unwrap();
    let back = read_sequence(&dir).unwrap();
    assert_eq!(back.frame_count, seq.bundle.frame_count);
    assert_eq!(back.name, seq.bundle.name);
    assert_eq!(back.gt, seq.bundle.gt);
    let (a, b) = (sorted(seq.bundle.detections.clone()), sorted(back.detections));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            (x.frame, x.bbox, x.det_score, x.humanity),
            (y.frame, y.bbox, y.det_score, y.humanity)
        );
        let (ex, ey) = (x.embedding.as_ref().unwrap(), y.embedding.as_ref().unwrap());
        assert!(ex.iter().zip(ey).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    // Writing what was read reproduces the files byte for byte.
    let again = tmp.path().join("again");
    write_sequence(&read_sequence(&dir).unwrap(), &again).unwrap();
    for f in [
        "det/det.txt",
        "gt/gt.txt",
        "det/embeddings.txt",
        "det/humanity.txt",
        "seqinfo.ini",
    ] {
        let read = |d: &std::path::Path| std::fs::read_to_string(d.join(f)).unwrap();
        assert_eq!(read(&dir), read(&again), "{f}");
    }
}

#[test]
fn results_round_trip_at_file_precision() {
    let seq = generate(&ScenarioConfig::noiseless(4, 30, 3)).unwrap();
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("out/results.txt");
    write_results(seq.gt(), &path).unwrap();
    let back = read_results(&path).unwrap();
    assert_eq!(back.len(), seq.gt().len());
    for (a, b) in seq.gt().iter().zip(&back) {
        assert_eq!(a.identity, b.identity);
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.frame, y.frame);
            assert!((x.bbox.x - y.bbox.x).abs() <= 0.005 + 1e-9);
            assert!((x.bbox.h - y.bbox.h).abs() <= 0.005 + 1e-9);
        }
    }
}

#[test]
fn config_and_checkpoints_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = EngineConfig {
        window: 45,
        step: Some(9),
        weighting: Weighting::LengthAndGap,
        lr: 2.5e-4,
        seed: 17,
        ..EngineConfig::default()
    };
    let path = tmp.path().join("run/config.txt");
    write_config(&cfg, &path).unwrap();
    assert_eq!(load_config(&path).unwrap(), cfg);

    let model = CostModel::new(cfg.beta, cfg.gamma, 5).unwrap();
    let text = model.to_checkpoint();
    assert_eq!(CostModel::from_checkpoint(&text).unwrap().to_checkpoint(), text);
    let affinity = AffinityModel::new(6);
    let text = affinity.to_checkpoint();
    assert_eq!(AffinityModel::from_checkpoint(&text).unwrap().to_checkpoint(), text);
}

#[test]
fn missing_and_malformed_files_are_errors() {
    let tmp = TempDir::new().unwrap();
    assert!(read_sequence(&tmp.path().join("absent")).is_err());
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "1,1,abc,0,10,10,1,-1,-1,-1\n").unwrap();
    let err = read_results(&bad).unwrap_err().to_string();
    assert!(err.contains("bad.txt") && err.contains('1'), "{err}");
}
