//! Low-level association between adjacent frames.
//!
//! A small classifier scores every detection pair of frames `t` and `t + 1`,
//! Hungarian matching picks a one-to-one assignment, and only dominant
//! high-confidence matches survive. Surviving matches are chained into
//! tracklets; everything uncertain is left to the flow stage.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assignment::{solve_assignment, CostMatrix, Objective};
use crate::error::{Error, Result};
use crate::labels::GroundTruthIndex;
use crate::nnet::{Activation, DenseNet};
use crate::types::{relative_position_distance, Detection, Frame, Tracklet, Trajectory};

pub const PAIR_FEATURE_DIM: usize = 7;

/// Appearance distance used when either side has no embedding.
pub const NEUTRAL_APPEARANCE_DISTANCE: f64 = 1.0;

/// Euclidean distance between embeddings.
pub fn appearance_distance(z1: &[f64], z2: &[f64]) -> Result<f64> {
    if z1.len() != z2.len() {
        return Err(Error::Dimension {
            expected: z1.len(),
            got: z2.len(),
        });
    }
    Ok(z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

pub(crate) fn optional_appearance_distance(z1: Option<&[f64]>, z2: Option<&[f64]>) -> Result<f64> {
    match (z1, z2) {
        (Some(a), Some(b)) => appearance_distance(a, b),
        _ => Ok(NEUTRAL_APPEARANCE_DISTANCE),
    }
}

/// Features of a candidate pair in adjacent frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeature {
    pub appearance: f64,
    pub position: [f64; 4],
    pub humanity: [f64; 2],
}

impl PairFeature {
    pub fn between(a: &Detection, b: &Detection) -> Result<Self> {
        Ok(Self {
            appearance: optional_appearance_distance(a.embedding.as_deref(), b.embedding.as_deref())?,
            position: relative_position_distance(&a.bbox, &b.bbox),
            humanity: [a.humanity, b.humanity],
        })
    }

    /// Network input. Position terms are compressed with `ln(1 + x)`; far
    /// pairs otherwise dominate the scale.
    pub fn to_input(&self) -> [f64; PAIR_FEATURE_DIM] {
        let p = self.position.map(f64::ln_1p);
        [
            self.appearance,
            p[0],
            p[1],
            p[2],
            p[3],
            self.humanity[0],
            self.humanity[1],
        ]
    }
}

/// Classifier giving the probability that two boxes share a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityModel {
    pub net: DenseNet,
}

impl AffinityModel {
    pub const LAYERS: [usize; 4] = [PAIR_FEATURE_DIM, 16, 8, 1];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::mlp(&Self::LAYERS, Activation::LeakyRelu, Activation::Sigmoid, &mut rng)
            .expect("fixed architecture is valid");
        Self { net }
    }

    pub fn score(&self, f: &PairFeature) -> f64 {
        self.net.predict(&f.to_input()).expect("fixed input width")
    }

    pub fn score_batch(&self, features: &[PairFeature]) -> Vec<f64> {
        if features.is_empty() {
            return Vec::new();
        }
        let x = Array2::from_shape_fn((features.len(), PAIR_FEATURE_DIM), |(r, c)| features[r].to_input()[c]);
        self.net.predict_batch(x.view()).expect("fixed input width")
    }

    pub fn accuracy(&self, pairs: &[(PairFeature, bool)]) -> f64 {
        if pairs.is_empty() {
            return 0.0;
        }
        let feats: Vec<PairFeature> = pairs.iter().map(|(f, _)| *f).collect();
        let correct = self
            .score_batch(&feats)
            .iter()
            .zip(pairs)
            .filter(|(y, (_, label))| (**y >= 0.5) == *label)
            .count();
        correct as f64 / pairs.len() as f64
    }

    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("affinity 1\n");
        self.net.write_checkpoint(&mut s);
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("affinity 1") => {}
            other => return Err(Error::Config(format!("not an affinity checkpoint: {other:?}"))),
        }
        let net = DenseNet::read_checkpoint(&mut lines)?;
        if net.layer_sizes() != Self::LAYERS {
            return Err(Error::Config(format!(
                "unexpected affinity layers {:?}",
                net.layer_sizes()
            )));
        }
        Ok(Self { net })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for AffinityTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 5e-3,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityReport {
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
    pub train_size: usize,
    pub heldout_size: usize,
}

/// Binary cross-entropy training with ADAM on mini-batches.
pub fn train_affinity(
    labeled_pairs: &[(PairFeature, bool)],
    cfg: &AffinityTrainConfig,
) -> Result<(AffinityModel, AffinityReport)> {
    let positives = labeled_pairs.iter().filter(|(_, l)| *l).count();
    if positives == 0 || positives == labeled_pairs.len() {
        return Err(Error::Training(
            "affinity training needs both positive and negative pairs".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = labeled_pairs.to_vec();
    data.shuffle(&mut rng);
    let n_holdout = ((data.len() as f64) * cfg.holdout_fraction).round() as usize;
    let n_holdout = n_holdout.min(data.len() - 1);
    let (heldout, train) = data.split_at(n_holdout);
    let mut train = train.to_vec();

    let mut model = AffinityModel::new(cfg.seed);
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size.max(1)) {
            let x = Array2::from_shape_fn((batch.len(), PAIR_FEATURE_DIM), |(r, c)| batch[r].0.to_input()[c]);
            let cache = model.net.forward_batch(x.view())?;
            // d(BCE)/dy; the sigmoid derivative in backward turns this into (y - t).
            let upstream: Vec<f64> = cache
                .outputs()
                .iter()
                .zip(batch)
                .map(|(&y, (_, label))| {
                    let t = if *label { 1.0 } else { 0.0 };
                    (y - t) / (y * (1.0 - y)).max(1e-12) / batch.len() as f64
                })
                .collect();
            let grads = model.net.backward_batch(&upstream, &cache)?;
            if grads.params.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training("non-finite affinity gradient".into()));
            }
            model.net.adam_step(&grads, cfg.lr)?;
        }
    }
    let report = AffinityReport {
        train_accuracy: model.accuracy(&train),
        heldout_accuracy: model.accuracy(heldout),
        train_size: train.len(),
        heldout_size: heldout.len(),
    };
    log::info!(
        "affinity model: train acc {:.4}, held-out acc {:.4} ({} pairs)",
        report.train_accuracy,
        report.heldout_accuracy,
        report.heldout_size
    );
    Ok((model, report))
}

/// Labeled adjacent-frame pairs from ground truth. Positives share an
/// identity; negatives are everything else, subsampled to
/// `negatives_per_positive` per positive.
pub fn affinity_training_pairs(
    frames: &[Vec<Detection>],
    gt: &[Trajectory],
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Vec<(PairFeature, bool)>> {
    let index = GroundTruthIndex::new(gt);
    let labels: Vec<Vec<Option<u32>>> = frames
        .iter()
        .map(|dets| match dets.first() {
            Some(d) => index.identities(d.frame, &dets.iter().map(|d| d.bbox).collect::<Vec<_>>()),
            None => Vec::new(),
        })
        .collect();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for t in 0..frames.len().saturating_sub(1) {
        for (i, a) in frames[t].iter().enumerate() {
            for (j, b) in frames[t + 1].iter().enumerate() {
                if b.frame != a.frame + 1 {
                    continue;
                }
                let same = matches!((labels[t][i], labels[t + 1][j]), (Some(x), Some(y)) if x == y);
                let f = PairFeature::between(a, b)?;
                if same {
                    positives.push((f, true));
                } else {
                    negatives.push((f, false));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    negatives.shuffle(&mut rng);
    negatives.truncate(positives.len() * negatives_per_positive);
    positives.extend(negatives);
    Ok(positives)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    pub theta_high: f64,
    pub margin: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            theta_high: 0.8,
            margin: 0.1,
        }
    }
}

/// Hungarian matching on an affinity matrix followed by the dominance gate:
/// a matched pair survives only if its affinity clears `theta_high` and beats
/// every other entry of its row and column by `margin`.
pub fn gate_matches(affinity: &[Vec<f64>], gate: &GateConfig) -> Vec<(usize, usize)> {
    if affinity.is_empty() || affinity[0].is_empty() {
        return Vec::new();
    }
    let m = CostMatrix::from_rows(affinity);
    solve_assignment(&m, Objective::Maximize)
        .into_iter()
        .filter(|&(i, j)| passes_gate(affinity, i, j, gate))
        .collect()
}

/// The gating predicate on its own, so callers can assert it.
pub fn passes_gate(affinity: &[Vec<f64>], i: usize, j: usize, gate: &GateConfig) -> bool {
    let y = affinity[i][j];
    if y < gate.theta_high {
        return false;
    }
    let row_ok = affinity[i]
        .iter()
        .enumerate()
        .all(|(k, &v)| k == j || y >= v + gate.margin);
    let col_ok = affinity
        .iter()
        .enumerate()
        .all(|(k, row)| k == i || y >= row[j] + gate.margin);
    row_ok && col_ok
}

pub fn affinity_matrix(frame_t: &[Detection], frame_t1: &[Detection], model: &AffinityModel) -> Result<Vec<Vec<f64>>> {
    let mut feats = Vec::with_capacity(frame_t.len() * frame_t1.len());
    for a in frame_t {
        for b in frame_t1 {
            feats.push(PairFeature::between(a, b)?);
        }
    }
    let scores = model.score_batch(&feats);
    Ok(scores
        .chunks(frame_t1.len().max(1))
        .take(frame_t.len())
        .map(<[f64]>::to_vec)
        .collect())
}

/// High-confidence matches between two consecutive frames.
pub fn match_adjacent(
    frame_t: &[Detection],
    frame_t1: &[Detection],
    model: &AffinityModel,
    gate: &GateConfig,
) -> Result<Vec<(usize, usize)>> {
    if frame_t.is_empty() || frame_t1.is_empty() {
        return Ok(Vec::new());
    }
    Ok(gate_matches(&affinity_matrix(frame_t, frame_t1, model)?, gate))
}

/// Matches for every consecutive frame pair; `frames[k]` holds frame `k + 1`.
pub fn match_sequence(
    frames: &[Vec<Detection>],
    model: &AffinityModel,
    gate: &GateConfig,
) -> Result<Vec<Vec<(usize, usize)>>> {
    (0..frames.len().saturating_sub(1))
        .into_par_iter()
        .map(|t| match_adjacent(&frames[t], &frames[t + 1], model, gate))
        .collect()
}

/// Chains per-frame matches into tracklets. `matches[k]` links detections of
/// `frames[k]` to `frames[k + 1]`. Ids follow (head frame, index) order.
pub fn build_tracklets(frames: &[Vec<Detection>], matches: &[Vec<(usize, usize)>]) -> Result<Vec<Tracklet>> {
    let mut successor: Vec<HashMap<usize, usize>> = vec![HashMap::new(); frames.len()];
    let mut has_predecessor: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.len()]).collect();
    for (t, pairs) in matches.iter().enumerate() {
        if t + 1 >= frames.len() {
            return Err(Error::Precondition(
                "matches reference a frame past the sequence".into(),
            ));
        }
        for &(i, j) in pairs {
            if i >= frames[t].len() || j >= frames[t + 1].len() {
                return Err(Error::Precondition(format!(
                    "match ({i}, {j}) out of range at frame index {t}"
                )));
            }
            if successor[t].insert(i, j).is_some() || std::mem::replace(&mut has_predecessor[t + 1][j], true) {
                return Err(Error::Precondition(format!(
                    "detection matched twice at frame index {t}"
                )));
            }
        }
    }
    let mut tracklets = Vec::new();
    for t in 0..frames.len() {
        for i in 0..frames[t].len() {
            if has_predecessor[t][i] {
                continue;
            }
            let mut chain = vec![frames[t][i].clone()];
            let (mut ft, mut fi) = (t, i);
            while let Some(&j) = successor[ft].get(&fi) {
                ft += 1;
                fi = j;
                chain.push(frames[ft][fi].clone());
            }
            tracklets.push(Tracklet::new(tracklets.len(), chain)?);
        }
    }
    Ok(tracklets)
}

/// Groups detections by frame into `frame_count` slots (frame `k` at index `k - 1`).
pub fn group_by_frame(detections: &[Detection], frame_count: Frame) -> Vec<Vec<Detection>> {
    let mut frames = vec![Vec::new(); frame_count as usize];
    for d in detections {
        if d.frame >= 1 && d.frame <= frame_count {
            frames[d.frame as usize - 1].push(d.clone());
        }
    }
    frames
}
