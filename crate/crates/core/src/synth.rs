//! Seeded synthetic scenes: walkers with piecewise constant velocity, a noisy
//! detector, humanity scores and per-identity appearance embeddings.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, Normal, Poisson};

use crate::error::{Error, Result};
use crate::io::SequenceBundle;
use crate::labels::LABEL_IOU;
use crate::pipeline::{interpolate, BoxEvidence, InterpolationValidator};
use crate::types::{iou, normalize, BoundingBox, Detection, Frame, Trajectory};

/// Occlusions are never longer than this, so every true gap fits under the
/// default link horizon.
pub const MAX_OCCLUSION: u32 = 29;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occlusion {
    pub identity: u32,
    pub start: Frame,
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_identities: usize,
    pub frames: u32,
    pub arena: (f64, f64),
    pub height_range: (f64, f64),
    /// Speed range in pixels per frame.
    pub speed_range: (f64, f64),
    /// Per-frame probability that a walker picks a new velocity.
    pub direction_change_prob: f64,
    /// Lifespan bounds as fractions of `frames`.
    pub lifespan: (f64, f64),
    pub p_miss: f64,
    /// Mean number of false positives per frame.
    pub fp_rate: f64,
    /// Box noise standard deviation as a fraction of box size.
    pub jitter_std: f64,
    /// Explicit occlusion episodes, applied in addition to random ones.
    pub occlusions: Vec<Occlusion>,
    pub random_occlusions: usize,
    pub occlusion_mean: f64,
    pub embedding_dim: usize,
    pub embedding_noise_std: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_identities: 20,
            frames: 300,
            arena: (1920.0, 1080.0),
            height_range: (80.0, 200.0),
            speed_range: (0.5, 4.0),
            direction_change_prob: 0.02,
            lifespan: (1.0 / 3.0, 1.0),
            p_miss: 0.1,
            fp_rate: 0.05,
            jitter_std: 0.05,
            occlusions: Vec::new(),
            random_occlusions: 4,
            occlusion_mean: 5.0,
            embedding_dim: 32,
            embedding_noise_std: 0.05,
            seed: 42,
        }
    }
}

impl ScenarioConfig {
    /// No misses, false positives, jitter or occlusions.
    pub fn noiseless(n_identities: usize, frames: u32, seed: u64) -> Self {
        Self {
            n_identities,
            frames,
            p_miss: 0.0,
            fp_rate: 0.0,
            jitter_std: 0.0,
            random_occlusions: 0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, p) in [
            ("p_miss", self.p_miss),
            ("direction_change_prob", self.direction_change_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        if !(self.fp_rate >= 0.0 && self.jitter_std >= 0.0 && self.embedding_noise_std >= 0.0) {
            return bad("rates and noise levels must be non-negative".into());
        }
        let ordered = |(a, b): (f64, f64)| a > 0.0 && a <= b;
        if !ordered(self.height_range) || !(self.speed_range.0 >= 0.0 && self.speed_range.0 <= self.speed_range.1) {
            return bad("height and speed ranges must be ordered and positive".into());
        }
        if !ordered(self.lifespan) || self.lifespan.1 > 1.0 {
            return bad(format!(
                "lifespan fractions {:?} must satisfy 0 < a <= b <= 1",
                self.lifespan
            ));
        }
        if self.arena.0 < 2.0 * self.height_range.1 || self.arena.1 < 2.0 * self.height_range.1 {
            return bad("arena too small for the box sizes".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if self.random_occlusions > 0 && !(self.occlusion_mean > 0.0) {
            return bad("occlusion_mean must be positive".into());
        }
        for o in &self.occlusions {
            if o.identity == 0 || o.identity as usize > self.n_identities || o.duration == 0 {
                return bad(format!("invalid occlusion {o:?}"));
            }
        }
        Ok(())
    }
}

/// A generated scene and the labels the detector does not reveal.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub bundle: SequenceBundle,
    /// True identity of each detection in `bundle.detections`, `None` for
    /// false positives.
    pub labels: Vec<Option<u32>>,
    /// Base appearance vector of identity `k + 1`.
    pub identity_embeddings: Vec<Vec<f64>>,
    /// Every occlusion episode applied, explicit ones first.
    pub occlusions: Vec<Occlusion>,
    /// Ground-truth boxes without a detection (misses and occlusions).
    pub dropped: usize,
}

impl SyntheticSequence {
    pub fn gt(&self) -> &[Trajectory] {
        self.bundle.gt.as_deref().unwrap_or(&[])
    }
}

struct Walker {
    start: Frame,
    end: Frame,
    /// Box centre.
    pos: (f64, f64),
    vel: (f64, f64),
    h: f64,
}

fn random_velocity(rng: &mut ChaCha8Rng, range: (f64, f64)) -> (f64, f64) {
    let speed = rng.random_range(range.0..=range.1);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    (speed * angle.cos(), speed * angle.sin())
}

/// Moves `p` by `v` inside `[lo, hi]`, mirroring at the walls.
fn reflect(p: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    let mut p = p + v;
    let mut v = v;
    if p < lo {
        p = (2.0 * lo - p).min(hi);
        v = -v;
    } else if p > hi {
        p = (2.0 * hi - p).max(lo);
        v = -v;
    }
    (p, v)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            normalize(&mut v);
            return v;
        }
    }
}

/// Draws the scene. The same config always yields the same sequence.
pub fn generate(cfg: &ScenarioConfig) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = cfg.frames;
    let (aw, ah) = cfg.arena;

    let mut walkers: Vec<Walker> = (0..cfg.n_identities)
        .map(|k| {
            let h = rng.random_range(cfg.height_range.0..=cfg.height_range.1);
            let w = 0.4 * h;
            let start = if k % 2 == 0 {
                1
            } else {
                rng.random_range(1..=(frames / 2).max(1))
            };
            let frac = rng.random_range(cfg.lifespan.0..=cfg.lifespan.1);
            let len = ((frac * frames as f64).round() as u32).max(1);
            let end = (start + len - 1).min(frames);
            let pos = (
                rng.random_range(w / 2.0..aw - w / 2.0),
                rng.random_range(h / 2.0..ah - h / 2.0),
            );
            Walker {
                start,
                end,
                pos,
                vel: random_velocity(&mut rng, cfg.speed_range),
                h,
            }
        })
        .collect();
    let identity_embeddings: Vec<Vec<f64>> = (0..cfg.n_identities)
        .map(|_| random_unit(&mut rng, cfg.embedding_dim))
        .collect();

    let mut occlusions = cfg.occlusions.clone();
    if cfg.n_identities > 0 && cfg.random_occlusions > 0 {
        let exp = Exp::new(1.0 / cfg.occlusion_mean).map_err(|e| Error::Config(e.to_string()))?;
        for _ in 0..cfg.random_occlusions {
            let k = rng.random_range(0..cfg.n_identities);
            let w = &walkers[k];
            let start = rng.random_range(w.start..=w.end);
            let duration = (exp.sample(&mut rng).ceil() as u32).clamp(1, MAX_OCCLUSION);
            occlusions.push(Occlusion {
                identity: k as u32 + 1,
                start,
                duration,
            });
        }
    }
    let occluded = |id: u32, f: Frame| {
        occlusions
            .iter()
            .any(|o| o.identity == id && f >= o.start && f < o.start + o.duration)
    };

    let jitter = Normal::new(0.0, cfg.jitter_std).map_err(|e| Error::Config(e.to_string()))?;
    let emb_noise = Normal::new(0.0, cfg.embedding_noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let tp_humanity = Beta::new(9.0, 1.0).unwrap();
    let fp_humanity = Beta::new(2.0, 8.0).unwrap();
    let tp_score = Normal::new(1.5, 0.5).unwrap();
    let fp_score = Normal::new(-0.5, 0.5).unwrap();
    let fp_count = (cfg.fp_rate > 0.0)
        .then(|| Poisson::new(cfg.fp_rate).map_err(|e| Error::Config(e.to_string())))
        .transpose()?;

    let mut gt: BTreeMap<u32, Vec<(Frame, BoundingBox)>> = BTreeMap::new();
    let mut detections = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    for f in 1..=frames {
        let mut frame_dets: Vec<(Detection, Option<u32>)> = Vec::new();
        for (k, w) in walkers.iter_mut().enumerate() {
            if f < w.start || f > w.end {
                continue;
            }
            let id = k as u32 + 1;
            if f > w.start {
                if rng.random::<f64>() < cfg.direction_change_prob {
                    w.vel = random_velocity(&mut rng, cfg.speed_range);
                }
                let bw = 0.4 * w.h;
                let (x, vx) = reflect(w.pos.0, w.vel.0, bw / 2.0, aw - bw / 2.0);
                let (y, vy) = reflect(w.pos.1, w.vel.1, w.h / 2.0, ah - w.h / 2.0);
                w.pos = (x, y);
                w.vel = (vx, vy);
            }
            let bw = 0.4 * w.h;
            let truth = BoundingBox::new(w.pos.0 - bw / 2.0, w.pos.1 - w.h / 2.0, bw, w.h);
            gt.entry(id).or_default().push((f, truth));
            // Draws happen unconditionally so that noise levels do not shift
            // the random stream of later walkers.
            let miss = rng.random::<f64>() < cfg.p_miss;
            let noise: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
            let humanity = tp_humanity.sample(&mut rng);
            let score = tp_score.sample(&mut rng);
            let mut z: Vec<f64> = identity_embeddings[k]
                .iter()
                .map(|v| v + emb_noise.sample(&mut rng))
                .collect();
            if miss || occluded(id, f) {
                dropped += 1;
                continue;
            }
            normalize(&mut z);
            let bbox = if cfg.jitter_std == 0.0 {
                truth
            } else {
                BoundingBox::new(
                    truth.x + noise[0] * truth.w,
                    truth.y + noise[1] * truth.h,
                    (truth.w * (1.0 + noise[2])).max(0.5 * truth.w),
                    (truth.h * (1.0 + noise[3])).max(0.5 * truth.h),
                )
            };
            frame_dets.push((Detection::new(f, bbox, score, humanity).with_embedding(z), Some(id)));
        }
        let n_fp = fp_count.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_fp {
            let h = rng.random_range(cfg.height_range.0..=cfg.height_range.1);
            let w = 0.4 * h;
            let bbox = BoundingBox::new(rng.random_range(0.0..aw - w), rng.random_range(0.0..ah - h), w, h);
            let d = Detection::new(f, bbox, fp_score.sample(&mut rng), fp_humanity.sample(&mut rng))
                .with_embedding(random_unit(&mut rng, cfg.embedding_dim));
            frame_dets.push((d, None));
        }
        frame_dets.shuffle(&mut rng);
        for (d, l) in frame_dets {
            detections.push(d);
            labels.push(l);
        }
    }
    let gt = gt
        .into_iter()
        .map(|(id, boxes)| Trajectory::from_boxes(id, boxes))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSequence {
        bundle: SequenceBundle {
            name: format!("synth-{}", cfg.seed),
            frame_count: frames,
            detections,
            gt: Some(gt),
        },
        labels,
        identity_embeddings,
        occlusions,
        dropped,
    })
}

/// Best trajectories obtainable from the emitted detections: every true
/// detection under its hidden identity, false positives left out, nothing
/// filled in.
pub fn oracle_tracker(seq: &SyntheticSequence) -> Result<Vec<Trajectory>> {
    let mut by_id: BTreeMap<u32, Vec<(Frame, BoundingBox)>> = BTreeMap::new();
    for (d, l) in seq.bundle.detections.iter().zip(&seq.labels) {
        if let Some(id) = l {
            by_id.entry(*id).or_default().push((d.frame, d.bbox));
        }
    }
    by_id
        .into_iter()
        .map(|(id, mut boxes)| {
            boxes.sort_by_key(|b| b.0);
            Trajectory::from_boxes(id, boxes)
        })
        .collect()
}

/// The oracle's trajectories with gaps of up to `gap_max` frames filled by
/// linear interpolation, the reference for trackers that interpolate too.
pub fn interpolated_oracle(seq: &SyntheticSequence, gap_max: u32) -> Result<Vec<Trajectory>> {
    Ok(oracle_tracker(seq)?.iter().map(|t| interpolate(t, gap_max)).collect())
}

/// Answers for arbitrary boxes from the ground truth: a box covering a
/// person gets high humanity and that identity's base embedding.
#[derive(Debug, Clone)]
pub struct SyntheticValidator {
    gt: crate::labels::GroundTruthIndex,
    embeddings: Vec<Vec<f64>>,
}

impl SyntheticValidator {
    pub const PERSON_HUMANITY: f64 = 0.9;
    pub const BACKGROUND_HUMANITY: f64 = 0.05;

    pub fn new(seq: &SyntheticSequence) -> Self {
        Self {
            gt: crate::labels::GroundTruthIndex::new(seq.gt()),
            embeddings: seq.identity_embeddings.clone(),
        }
    }
}

impl InterpolationValidator for SyntheticValidator {
    fn inspect(&self, frame: Frame, bbox: &BoundingBox) -> Option<BoxEvidence> {
        let best = self
            .gt
            .at(frame)
            .iter()
            .map(|(id, b)| (*id, iou(b, bbox)))
            .filter(|&(_, v)| v >= LABEL_IOU)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        Some(match best {
            Some((id, _)) => BoxEvidence {
                humanity: Self::PERSON_HUMANITY,
                embedding: self.embeddings.get(id as usize - 1).cloned(),
            },
            None => BoxEvidence {
                humanity: Self::BACKGROUND_HUMANITY,
                embedding: None,
            },
        })
    }
}
