use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use flowtrack::config::EngineConfig;
use flowtrack::cost_model::CostModel;
use flowtrack::experiment::{
    association_windows, preprocessed_frames, train_affinity_model, train_cost_model, Benchmark,
};
use flowtrack::io::{
    read_file, read_ground_truth, read_results, read_sequence, write_config, write_file, write_results, write_sequence,
    GtFilter, SequenceBundle,
};
use flowtrack::metrics::{evaluate, EvalReport, DEFAULT_IOU_MIN};
use flowtrack::pipeline::{generate_tracklets, track_sequence};
use flowtrack::synth::{generate, ScenarioConfig, SyntheticValidator};
use flowtrack::tracklets::AffinityModel;
use flowtrack::trainer::Weighting;
use flowtrack::{Frame, Trajectory};
use log::info;

use crate::{plot, Command, ScenarioArgs};

pub const CONFIG_FILE: &str = "config.txt";
pub const SCENARIO_FILE: &str = "scenario.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const RESULTS_FILE: &str = "results.txt";
pub const INTERPOLATED_FILE: &str = "interpolated.txt";
pub const ABLATION_FILE: &str = "ablation.csv";

pub fn run(command: &Command, cfg: &EngineConfig, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Synth { scenario, out } => synth(&scenario_config(scenario, seed), cfg, out),
        Command::Preprocess { seq, out } => preprocess(seq, cfg, out),
        Command::Tracklets { seq, affinity, out } => tracklets(seq, affinity, cfg, out),
        Command::TrainAffinity { train, out } => train_affinity(train, cfg, out),
        Command::TrainAssoc {
            train,
            validation,
            affinity,
            out,
        } => train_assoc(train, validation.as_deref(), affinity, cfg, out),
        Command::Track {
            seq,
            affinity,
            model,
            out,
        } => track(seq, affinity, model, cfg, out),
        Command::Eval {
            gt,
            results,
            iou_min,
            csv,
        } => eval(gt, results, *iou_min, csv.as_deref()),
        Command::Ablate {
            scenario,
            windows,
            schemes,
            train_sequences,
            out,
        } => ablate(
            &scenario_config(scenario, seed),
            windows,
            schemes,
            *train_sequences,
            cfg,
            out,
        ),
        Command::PlotTracks {
            results,
            interpolated,
            gt,
            out,
        } => plot_tracks(results, interpolated.as_deref(), gt.as_deref(), out),
    }
}

fn scenario_config(a: &ScenarioArgs, seed: Option<u64>) -> ScenarioConfig {
    let seed = seed.unwrap_or(ScenarioConfig::default().seed);
    if a.noiseless {
        return ScenarioConfig::noiseless(a.identities, a.frames, seed);
    }
    ScenarioConfig {
        n_identities: a.identities,
        frames: a.frames,
        p_miss: a.p_miss,
        fp_rate: a.fp_rate,
        jitter_std: a.jitter,
        random_occlusions: a.occlusions,
        occlusion_mean: a.occlusion_mean,
        embedding_noise_std: a.embedding_noise,
        seed,
        ..ScenarioConfig::default()
    }
}

fn scenario_text(s: &ScenarioConfig) -> String {
    format!(
        "identities = {}\nframes = {}\np_miss = {}\nfp_rate = {}\njitter = {}\nocclusions = {}\nocclusion_mean = {}\nembedding_noise = {}\nseed = {}\n",
        s.n_identities,
        s.frames,
        s.p_miss,
        s.fp_rate,
        s.jitter_std,
        s.random_occlusions,
        s.occlusion_mean,
        s.embedding_noise_std,
        s.seed
    )
}

fn echo_config(cfg: &EngineConfig, dir: &Path) -> Result<()> {
    Ok(write_config(cfg, &dir.join(CONFIG_FILE))?)
}

fn load_sequence(dir: &Path) -> Result<SequenceBundle> {
    read_sequence(dir).with_context(|| format!("reading sequence {}", dir.display()))
}

fn load_affinity(path: &Path) -> Result<AffinityModel> {
    let text = read_file(path).context("loading affinity model")?;
    AffinityModel::from_checkpoint(&text).with_context(|| format!("parsing affinity model {}", path.display()))
}

fn load_model(path: &Path) -> Result<CostModel> {
    let text = read_file(path).context("loading cost model")?;
    CostModel::from_checkpoint(&text).with_context(|| format!("parsing cost model {}", path.display()))
}

fn synth(scenario: &ScenarioConfig, cfg: &EngineConfig, out: &Path) -> Result<()> {
    let seq = generate(scenario)?;
    write_sequence(&seq.bundle, out)?;
    write_file(&out.join(SCENARIO_FILE), &scenario_text(scenario))?;
    echo_config(cfg, out)?;
    let dets = seq.bundle.detections.len();
    let fps = seq.labels.iter().filter(|l| l.is_none()).count();
    let gt_boxes: usize = seq.gt().iter().map(Trajectory::len).sum();
    println!(
        "identities {}  frames {}  gt boxes {gt_boxes}  detections {dets}  true {}  false {fps}  dropped {}  occlusions {}",
        seq.gt().len(),
        seq.bundle.frame_count,
        dets - fps,
        seq.dropped,
        seq.occlusions.len()
    );
    Ok(())
}

fn preprocess(seq: &Path, cfg: &EngineConfig, out: &Path) -> Result<()> {
    let bundle = load_sequence(seq)?;
    let before = bundle.detections.len();
    let kept: Vec<_> = preprocessed_frames(&bundle, cfg).into_iter().flatten().collect();
    println!("kept {} of {before} detections", kept.len());
    let filtered = SequenceBundle {
        detections: kept,
        ..bundle
    };
    write_sequence(&filtered, out)?;
    echo_config(cfg, out)
}

fn tracklets(seq: &Path, affinity: &Path, cfg: &EngineConfig, out: &Path) -> Result<()> {
    let bundle = load_sequence(seq)?;
    let model = load_affinity(affinity)?;
    let tracklets = generate_tracklets(&bundle.detections, &model, cfg)?;
    let tracks = tracklets
        .iter()
        .enumerate()
        .map(|(i, t)| Trajectory::from_boxes(i as u32 + 1, t.detections().iter().map(|d| (d.frame, d.bbox))))
        .collect::<flowtrack::Result<Vec<_>>>()?;
    write_results(&tracks, out)?;
    let boxes: usize = tracks.iter().map(Trajectory::len).sum();
    println!(
        "{} tracklets, {boxes} boxes, mean length {:.2}",
        tracks.len(),
        boxes as f64 / tracks.len().max(1) as f64
    );
    Ok(())
}

fn train_affinity(train: &[std::path::PathBuf], cfg: &EngineConfig, out: &Path) -> Result<()> {
    let bundles = train.iter().map(|p| load_sequence(p)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&SequenceBundle> = bundles.iter().collect();
    let (model, report) = train_affinity_model(&refs, cfg)?;
    write_file(out, &model.to_checkpoint())?;
    println!(
        "{} training pairs, accuracy {:.4}; {} held-out pairs, accuracy {:.4}",
        report.train_size, report.train_accuracy, report.heldout_size, report.heldout_accuracy
    );
    Ok(())
}

fn train_assoc(
    train: &[std::path::PathBuf],
    validation: Option<&Path>,
    affinity: &Path,
    cfg: &EngineConfig,
    out: &Path,
) -> Result<()> {
    let affinity = load_affinity(affinity)?;
    let mut windows = Vec::new();
    for p in train {
        windows.extend(association_windows(&load_sequence(p)?, &affinity, cfg)?);
    }
    ensure!(
        !windows.is_empty(),
        "training sequences produced no tracklets to associate"
    );
    let held_out = match validation {
        Some(p) => association_windows(&load_sequence(p)?, &affinity, cfg)?,
        None => Vec::new(),
    };
    info!(
        "{} training windows, {} validation windows",
        windows.len(),
        held_out.len()
    );
    let (model, report) = train_cost_model(&windows, &held_out, cfg)?;
    write_file(&out.join(MODEL_FILE), &model.to_checkpoint())?;
    write_file(&out.join(TRAIN_LOG_FILE), &report.to_csv())?;
    echo_config(cfg, out)?;
    let first = report.history.first().map_or(f64::NAN, |r| r.loss);
    let last = report.history.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "{} iterations, loss {first:.4} -> {last:.4}, kept iteration {}",
        report.history.len(),
        report.best_iteration
    );
    Ok(())
}

/// `frame,identity` for every interpolated box.
pub fn format_interpolated(tracks: &[Trajectory]) -> String {
    let mut rows: Vec<(Frame, u32)> = tracks
        .iter()
        .flat_map(|t| {
            t.entries
                .iter()
                .filter(|e| e.interpolated)
                .map(move |e| (e.frame, t.identity))
        })
        .collect();
    rows.sort_unstable();
    rows.iter().fold(String::new(), |mut s, (f, id)| {
        let _ = writeln!(s, "{f},{id}");
        s
    })
}

pub fn parse_interpolated(text: &str, path: &Path) -> Result<BTreeSet<(Frame, u32)>> {
    let mut out = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(f, id)| Some((f.trim().parse().ok()?, id.trim().parse().ok()?)));
        let row = parsed.with_context(|| format!("{}:{}: expected `frame,identity`", path.display(), n + 1))?;
        out.insert(row);
    }
    Ok(out)
}

fn track(seq: &Path, affinity: &Path, model: &Path, cfg: &EngineConfig, out: &Path) -> Result<()> {
    let bundle = load_sequence(seq)?;
    let affinity = load_affinity(affinity)?;
    let model = load_model(model)?;
    let result = track_sequence(&bundle.detections, &affinity, &model, cfg, None)?;
    write_results(&result.trajectories, &out.join(RESULTS_FILE))?;
    write_file(&out.join(INTERPOLATED_FILE), &format_interpolated(&result.trajectories))?;
    echo_config(cfg, out)?;
    let boxes: usize = result.trajectories.iter().map(Trajectory::len).sum();
    let filled = result
        .trajectories
        .iter()
        .flat_map(|t| &t.entries)
        .filter(|e| e.interpolated)
        .count();
    println!(
        "{} tracklets -> {} trajectories, {boxes} boxes ({filled} interpolated)",
        result.tracklets.len(),
        result.trajectories.len()
    );
    Ok(())
}

fn eval(gt: &Path, results: &Path, iou_min: f64, csv: Option<&Path>) -> Result<()> {
    let gt = read_ground_truth(gt, &GtFilter::default())?;
    let hyp = read_results(results)?;
    let report = evaluate(&hyp, &gt, iou_min)?;
    print!("{}", report.to_table());
    if let Some(p) = csv {
        write_file(p, &report.to_csv())?;
    }
    Ok(())
}

pub const ABLATION_HEADER: &str = "window,scheme,mota,motp,fp,fn,ids,gt,mt,ml";

fn ablate(
    scenario: &ScenarioConfig,
    windows: &[u32],
    schemes: &[Weighting],
    train_sequences: usize,
    cfg: &EngineConfig,
    out: &Path,
) -> Result<()> {
    ensure!(train_sequences > 0, "--train-sequences must be at least 1");
    let bench = Benchmark {
        scenario: scenario.clone(),
        engine: cfg.clone(),
        train_sequences,
        validate_interpolation: true,
    };
    let train_seqs = bench.training_sequences()?;
    let validation = bench.validation_sequence()?;
    let test = bench.test_sequence()?;
    let bundles: Vec<&SequenceBundle> = train_seqs.iter().map(|s| &s.bundle).collect();
    // The affinity model sees single frame pairs, so one fit serves the sweep.
    let (affinity, _) = train_affinity_model(&bundles, cfg)?;
    let validator = SyntheticValidator::new(&test);

    let mut csv = format!("{ABLATION_HEADER}\n");
    for &w in windows {
        for &scheme in schemes {
            let run_cfg = EngineConfig {
                window: w,
                weighting: scheme,
                step: None,
                train_step: None,
                ..cfg.clone()
            };
            run_cfg.validate()?;
            let mut train_windows = Vec::new();
            for s in &train_seqs {
                train_windows.extend(association_windows(&s.bundle, &affinity, &run_cfg)?);
            }
            let held_out = association_windows(&validation.bundle, &affinity, &run_cfg)?;
            let (model, _) = train_cost_model(&train_windows, &held_out, &run_cfg)?;
            let result = track_sequence(&test.bundle.detections, &affinity, &model, &run_cfg, Some(&validator))?;
            let r: EvalReport = evaluate(&result.trajectories, test.gt(), DEFAULT_IOU_MIN)?;
            let row = format!("{w},{scheme},{}", r.csv_row());
            info!("{row}");
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    write_file(&out.join(ABLATION_FILE), &csv)?;
    write_file(&out.join(SCENARIO_FILE), &scenario_text(scenario))?;
    echo_config(cfg, out)?;
    print!("{csv}");
    Ok(())
}

fn plot_tracks(results: &Path, interpolated: Option<&Path>, gt: Option<&Path>, out: &Path) -> Result<()> {
    let tracks = read_results(results)?;
    let flags = match interpolated {
        Some(p) => parse_interpolated(&read_file(p)?, p)?,
        None => BTreeSet::new(),
    };
    let gt = gt.map(|p| read_ground_truth(p, &GtFilter::default())).transpose()?;
    let svg = plot::render(&tracks, &flags, gt.as_deref().unwrap_or(&[]));
    write_file(out, &svg)?;
    println!("{} trajectories drawn", tracks.len());
    Ok(())
}
