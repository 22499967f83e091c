//! End-to-end flows shared by the command line and the benchmark tests:
//! train the affinity model, build association training windows, train the
//! cost model, track and evaluate.

use rayon::prelude::*;

use crate::config::EngineConfig;
use crate::cost_model::CostModel;
use crate::error::{Error, Result};
use crate::io::{format_results, SequenceBundle};
use crate::metrics::{evaluate, EvalReport, DEFAULT_IOU_MIN};
use crate::pipeline::{generate_tracklets, plan_windows, track_sequence, InterpolationValidator, TrackingResult};
use crate::preprocess::preprocess_frame;
use crate::synth::{
    generate, interpolated_oracle, oracle_tracker, ScenarioConfig, SyntheticSequence, SyntheticValidator,
};
use crate::tracklets::{affinity_training_pairs, group_by_frame, train_affinity, AffinityModel, AffinityReport};
use crate::trainer::{evaluate_training_window, sequence_windows, train, TrainReport, TrainingWindow};

fn require_gt(bundle: &SequenceBundle) -> Result<&[crate::types::Trajectory]> {
    bundle
        .gt
        .as_deref()
        .ok_or_else(|| Error::Usage(format!("sequence `{}` has no ground truth", bundle.name)))
}

/// Preprocessed detections grouped by frame.
pub fn preprocessed_frames(bundle: &SequenceBundle, cfg: &EngineConfig) -> Vec<Vec<crate::types::Detection>> {
    let pre = cfg.preprocess();
    group_by_frame(&bundle.detections, bundle.frame_count)
        .par_iter()
        .map(|f| preprocess_frame(f, &pre))
        .collect()
}

/// Fits the adjacent-frame affinity model on labelled pairs from every
/// bundle.
pub fn train_affinity_model(
    bundles: &[&SequenceBundle],
    cfg: &EngineConfig,
) -> Result<(AffinityModel, AffinityReport)> {
    let mut pairs = Vec::new();
    for (k, b) in bundles.iter().enumerate() {
        let gt = require_gt(b)?;
        let frames = preprocessed_frames(b, cfg);
        pairs.extend(affinity_training_pairs(
            &frames,
            gt,
            cfg.affinity_negatives,
            cfg.seed.wrapping_add(k as u64),
        )?);
    }
    train_affinity(&pairs, &cfg.affinity_train())
}

/// Training windows over the tracklets the affinity model produces for a
/// bundle.
pub fn association_windows(
    bundle: &SequenceBundle,
    affinity: &AffinityModel,
    cfg: &EngineConfig,
) -> Result<Vec<TrainingWindow>> {
    let gt = require_gt(bundle)?;
    let tracklets = generate_tracklets(&bundle.detections, affinity, cfg)?;
    if tracklets.is_empty() {
        return Ok(Vec::new());
    }
    let plan = plan_windows(bundle.frame_count.max(1), cfg.window, cfg.train_step())?;
    sequence_windows(&tracklets, gt, &plan.windows, cfg.beta, &cfg.train(), &cfg.kalman())
}

/// Fresh cost model trained on `windows`.
pub fn train_cost_model(
    windows: &[TrainingWindow],
    validation: &[TrainingWindow],
    cfg: &EngineConfig,
) -> Result<(CostModel, TrainReport)> {
    let mut model = CostModel::new(cfg.beta, cfg.gamma, cfg.seed)?;
    let report = train(windows, validation, &mut model, &cfg.train())?;
    Ok((model, report))
}

/// Fraction of edges whose solved flow equals the target flow.
pub fn edge_accuracy(model: &CostModel, windows: &[TrainingWindow]) -> Result<f64> {
    let counts = windows
        .par_iter()
        .map(|w| {
            let e = evaluate_training_window(model, w)?;
            let correct = e.x_star.iter().zip(w.gt.x()).filter(|(a, b)| a == b).count();
            Ok((correct, e.x_star.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (c, n) = counts.iter().fold((0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    Ok(c as f64 / n.max(1) as f64)
}

/// Scenario family of a benchmark: the test sequence plus training and
/// validation sequences drawn with neighbouring seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub scenario: ScenarioConfig,
    pub engine: EngineConfig,
    pub train_sequences: usize,
    /// Vet interpolated boxes with the ground-truth backed validator.
    pub validate_interpolation: bool,
}

impl Default for Benchmark {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            engine: EngineConfig::default(),
            train_sequences: 2,
            validate_interpolation: true,
        }
    }
}

impl Benchmark {
    fn sequence(&self, offset: u64) -> Result<SyntheticSequence> {
        generate(&ScenarioConfig {
            seed: self.scenario.seed.wrapping_add(offset),
            ..self.scenario.clone()
        })
    }

    pub fn test_sequence(&self) -> Result<SyntheticSequence> {
        self.sequence(0)
    }

    pub fn training_sequences(&self) -> Result<Vec<SyntheticSequence>> {
        (1..=self.train_sequences as u64).map(|k| self.sequence(k)).collect()
    }

    pub fn validation_sequence(&self) -> Result<SyntheticSequence> {
        self.sequence(self.train_sequences as u64 + 1)
    }
}

/// Everything a benchmark run produces.
#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub affinity: AffinityModel,
    pub affinity_report: AffinityReport,
    pub train_report: TrainReport,
    pub model: CostModel,
    /// Edge accuracy of the trained model on the validation sequence windows.
    pub heldout_accuracy: f64,
    pub tracking: TrackingResult,
    pub eval: EvalReport,
    pub oracle: EvalReport,
    /// Oracle with its gaps interpolated.
    pub interpolated_oracle: EvalReport,
    /// Result file contents for the test sequence.
    pub results: String,
}

pub fn run_benchmark(b: &Benchmark) -> Result<BenchmarkOutcome> {
    let cfg = &b.engine;
    cfg.validate()?;
    let train_seqs = b.training_sequences()?;
    let validation = b.validation_sequence()?;
    let test = b.test_sequence()?;

    let bundles: Vec<&SequenceBundle> = train_seqs.iter().map(|s| &s.bundle).collect();
    let (affinity, affinity_report) = train_affinity_model(&bundles, cfg)?;
    let mut windows = Vec::new();
    for s in &train_seqs {
        windows.extend(association_windows(&s.bundle, &affinity, cfg)?);
    }
    let held_out = association_windows(&validation.bundle, &affinity, cfg)?;
    let (model, train_report) = train_cost_model(&windows, &held_out, cfg)?;
    let heldout_accuracy = edge_accuracy(&model, &held_out)?;

    let validator = SyntheticValidator::new(&test);
    let v: Option<&dyn InterpolationValidator> = if b.validate_interpolation {
        Some(&validator)
    } else {
        None
    };
    let tracking = track_sequence(&test.bundle.detections, &affinity, &model, cfg, v)?;
    let eval = evaluate(&tracking.trajectories, test.gt(), DEFAULT_IOU_MIN)?;
    let oracle = evaluate(&oracle_tracker(&test)?, test.gt(), DEFAULT_IOU_MIN)?;
    let interpolated_oracle = evaluate(&interpolated_oracle(&test, cfg.gap_max)?, test.gt(), DEFAULT_IOU_MIN)?;
    Ok(BenchmarkOutcome {
        affinity,
        affinity_report,
        train_report,
        model,
        heldout_accuracy,
        results: format_results(&tracking.trajectories),
        tracking,
        eval,
        oracle,
        interpolated_oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Benchmark {
        Benchmark {
            scenario: ScenarioConfig {
                n_identities: 6,
                frames: 90,
                ..ScenarioConfig::default()
            },
            engine: EngineConfig {
                iterations: 20,
                affinity_epochs: 10,
                ..EngineConfig::default()
            },
            train_sequences: 1,
            validate_interpolation: true,
        }
    }

    #[test]
    fn small_benchmark_runs_and_repeats() {
        let b = small();
        let a = run_benchmark(&b).unwrap();
        assert_eq!(a.train_report.history.len(), 20);
        assert!(a.eval.mota > 0.5, "{}", a.eval.mota);
        let again = run_benchmark(&b).unwrap();
        assert_eq!(a.results, again.results);
        assert_eq!(a.train_report.to_csv(), again.train_report.to_csv());
    }

    #[test]
    fn missing_ground_truth_is_a_usage_error() {
        let seq = b_seq();
        let mut bundle = seq.bundle.clone();
        bundle.gt = None;
        assert!(matches!(
            train_affinity_model(&[&bundle], &EngineConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    fn b_seq() -> SyntheticSequence {
        small().test_sequence().unwrap()
    }
}
