//! Sequence-level tracking: sliding windows, per-window flow solves, merging
//! of window results, and gap interpolation.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::assignment::{solve_assignment, CostMatrix, Objective};
use crate::config::EngineConfig;
use crate::cost_model::CostModel;
use crate::error::{Error, Result};
use crate::features::{graph_features, motion_summaries, MotionSummary};
use crate::flow::{solve_min_cost, FlowGraph};
use crate::preprocess::preprocess_frame;
use crate::tracklets::{appearance_distance, build_tracklets, group_by_frame, match_sequence, AffinityModel};
use crate::types::{
    mean_unit_embedding, BoundingBox, Detection, Frame, Tracklet, TrackletId, Trajectory, TrajectoryEntry,
};

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub window: u32,
    pub step: u32,
    /// Inclusive frame ranges.
    pub windows: Vec<(Frame, Frame)>,
}

impl WindowPlan {
    /// Tracklet ids (indices into `tracklets`) whose span meets each window.
    pub fn members(&self, tracklets: &[Tracklet]) -> Vec<Vec<TrackletId>> {
        self.windows
            .iter()
            .map(|&(s, e)| {
                tracklets
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.overlaps_span(s, e))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    }
}

/// Windows of `window` frames every `step` frames over `1..=length`; the
/// last one is clipped at the end of the sequence.
pub fn plan_windows(length: u32, window: u32, step: u32) -> Result<WindowPlan> {
    if window == 0 || step == 0 || step > window {
        return Err(Error::Config(format!("window step {step} must be in 1..={window}")));
    }
    let mut windows = Vec::new();
    let mut start = 1;
    if length > 0 {
        loop {
            let end = (start + window - 1).min(length);
            windows.push((start, end));
            if end == length {
                break;
            }
            start += step;
        }
    }
    Ok(WindowPlan { window, step, windows })
}

/// Stitches per-window chains (tracklet ids in time order) into sequence-wide
/// chains. Chains of adjacent windows are paired by maximum shared-tracklet
/// count; pairs sharing nothing are never merged. A tracklet already owned by
/// another merged chain stays with the first owner, and a tracklet that would
/// overlap an owned one in time is dropped. `spans` gives the frame span of
/// every tracklet id.
pub fn merge_windows(per_window: &[Vec<Vec<TrackletId>>], spans: &[(Frame, Frame)]) -> Vec<Vec<TrackletId>> {
    let mut tracks: Vec<BTreeSet<(Frame, TrackletId)>> = Vec::new();
    let mut owner: HashMap<TrackletId, usize> = HashMap::new();
    let mut prev: Vec<(usize, &Vec<TrackletId>)> = Vec::new();
    for chains in per_window {
        let matched: HashMap<usize, usize> = if prev.is_empty() {
            HashMap::new()
        } else {
            let m = CostMatrix::from_fn(prev.len(), chains.len(), |a, b| {
                let shared = prev[a].1.iter().filter(|id| chains[b].contains(id)).count();
                (shared > 0).then_some(shared as f64)
            });
            solve_assignment(&m, Objective::Maximize)
                .into_iter()
                .map(|(a, b)| (b, prev[a].0))
                .collect()
        };
        let mut next_prev = Vec::with_capacity(chains.len());
        for (b, chain) in chains.iter().enumerate() {
            let target = match matched.get(&b) {
                Some(&t) => t,
                None => {
                    tracks.push(BTreeSet::new());
                    tracks.len() - 1
                }
            };
            for &id in chain {
                match owner.get(&id) {
                    Some(&o) if o == target => continue,
                    Some(&o) => {
                        log::debug!("tracklet {id} kept by chain {o}, dropped from chain {target}");
                        continue;
                    }
                    None => {}
                }
                let (h, t) = spans[id];
                let clash = tracks[target]
                    .iter()
                    .any(|&(_, other)| spans[other].0 <= t && spans[other].1 >= h);
                if clash {
                    log::debug!("tracklet {id} overlaps chain {target} in time, dropped");
                    continue;
                }
                tracks[target].insert((h, id));
                owner.insert(id, target);
            }
            next_prev.push((target, chain));
        }
        prev = next_prev;
    }
    let mut out: Vec<Vec<TrackletId>> = tracks
        .into_iter()
        .filter(|t| !t.is_empty())
        .map(|t| t.into_iter().map(|(_, id)| id).collect())
        .collect();
    out.sort_by_key(|c| (spans[c[0]].0, c[0]));
    out
}

/// Fills gaps of at most `gap_max` missing frames by linear interpolation of
/// the flanking boxes. Filled entries are flagged; longer gaps stay open.
pub fn interpolate(trajectory: &Trajectory, gap_max: u32) -> Trajectory {
    let mut entries = Vec::with_capacity(trajectory.entries.len());
    for (k, e) in trajectory.entries.iter().enumerate() {
        if k > 0 {
            let p = &trajectory.entries[k - 1];
            let missing = e.frame - p.frame - 1;
            if missing > 0 && missing <= gap_max {
                let span = (e.frame - p.frame) as f64;
                for f in p.frame + 1..e.frame {
                    entries.push(TrajectoryEntry {
                        frame: f,
                        bbox: p.bbox.lerp(&e.bbox, (f - p.frame) as f64 / span),
                        interpolated: true,
                    });
                }
            }
        }
        entries.push(*e);
    }
    Trajectory {
        identity: trajectory.identity,
        entries,
    }
}

/// What a validator reports about a box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxEvidence {
    pub humanity: f64,
    pub embedding: Option<Vec<f64>>,
}

/// Source of humanity and appearance for arbitrary boxes, used to vet
/// interpolated boxes.
pub trait InterpolationValidator: Sync {
    fn inspect(&self, frame: Frame, bbox: &BoundingBox) -> Option<BoxEvidence>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationConfig {
    pub humanity_min: f64,
    pub distance_max: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            humanity_min: 0.1,
            distance_max: 1.0,
        }
    }
}

/// Drops interpolated boxes the validator deems implausible: too low a
/// humanity, or an embedding farther than `distance_max` from `reference`.
/// Real boxes are never touched.
pub fn validate_interpolation(
    trajectory: &Trajectory,
    validator: Option<&dyn InterpolationValidator>,
    reference: Option<&[f64]>,
    cfg: &ValidationConfig,
) -> Trajectory {
    let Some(v) = validator else {
        return trajectory.clone();
    };
    let entries = trajectory
        .entries
        .iter()
        .filter(|e| {
            if !e.interpolated {
                return true;
            }
            let Some(ev) = v.inspect(e.frame, &e.bbox) else {
                return true;
            };
            if ev.humanity < cfg.humanity_min {
                return false;
            }
            match (ev.embedding.as_deref(), reference) {
                (Some(z), Some(r)) => appearance_distance(z, r).map_or(true, |d| d <= cfg.distance_max),
                _ => true,
            }
        })
        .copied()
        .collect();
    Trajectory {
        identity: trajectory.identity,
        entries,
    }
}

/// Output of a tracking run.
#[derive(Debug, Clone, Default)]
pub struct TrackingResult {
    pub tracklets: Vec<Tracklet>,
    /// Tracklet-id chains behind each trajectory, in trajectory order.
    pub chains: Vec<Vec<TrackletId>>,
    pub trajectories: Vec<Trajectory>,
}

/// Per-frame preprocessing and adjacent-frame matching into tracklets.
/// Tracklet ids index the returned vector.
pub fn generate_tracklets(
    detections: &[Detection],
    affinity: &AffinityModel,
    cfg: &EngineConfig,
) -> Result<Vec<Tracklet>> {
    let frame_count = detections.iter().map(|d| d.frame).max().unwrap_or(0);
    let pre = cfg.preprocess();
    let frames: Vec<Vec<Detection>> = group_by_frame(detections, frame_count)
        .par_iter()
        .map(|f| preprocess_frame(f, &pre))
        .collect();
    let matches = match_sequence(&frames, affinity, &cfg.gate())?;
    build_tracklets(&frames, &matches)
}

/// Solves one window; chains come back as tracklet ids.
pub fn solve_window(
    members: &[TrackletId],
    tracklets: &[Tracklet],
    motion: &[MotionSummary],
    model: &CostModel,
    dt_max: u32,
) -> Result<Vec<Vec<TrackletId>>> {
    let nodes: Vec<&Tracklet> = members.iter().map(|&i| &tracklets[i]).collect();
    let mut graph = FlowGraph::build(&nodes, dt_max, model.beta);
    let f = graph_features(&graph, tracklets, motion)?;
    model.assign_costs(
        &mut graph,
        &model.unary_inputs(&f.unary),
        &model.pairwise_inputs(&f.pairwise),
    )?;
    let solution = solve_min_cost(&graph)?;
    Ok(solution
        .chains
        .iter()
        .map(|c| c.iter().map(|&k| graph.node_ids()[k]).collect())
        .collect())
}

/// Windowed association of existing tracklets into chains.
pub fn associate(tracklets: &[Tracklet], model: &CostModel, cfg: &EngineConfig) -> Result<Vec<Vec<TrackletId>>> {
    let length = tracklets.iter().map(Tracklet::tail_frame).max().unwrap_or(0);
    if length == 0 {
        return Ok(Vec::new());
    }
    let plan = plan_windows(length, cfg.window, cfg.step())?;
    let motion = motion_summaries(tracklets, &cfg.kalman());
    let per_window = plan
        .members(tracklets)
        .par_iter()
        .map(|m| solve_window(m, tracklets, &motion, model, cfg.dt_max))
        .collect::<Result<Vec<_>>>()?;
    let spans: Vec<(Frame, Frame)> = tracklets.iter().map(|t| (t.head_frame(), t.tail_frame())).collect();
    Ok(merge_windows(&per_window, &spans))
}

/// Trajectories from chains: member boxes in order, gaps interpolated and
/// vetted. Identities are numbered from 1 in chain order.
pub fn chains_to_trajectories(
    chains: &[Vec<TrackletId>],
    tracklets: &[Tracklet],
    cfg: &EngineConfig,
    validator: Option<&dyn InterpolationValidator>,
) -> Result<Vec<Trajectory>> {
    let vcfg = ValidationConfig {
        humanity_min: cfg.interp_humanity_min,
        distance_max: cfg.interp_distance_max,
    };
    chains
        .par_iter()
        .enumerate()
        .map(|(i, chain)| {
            let members: Vec<&Tracklet> = chain.iter().map(|&id| &tracklets[id]).collect();
            let entries = members
                .iter()
                .flat_map(|t| t.detections())
                .map(|d| TrajectoryEntry {
                    frame: d.frame,
                    bbox: d.bbox,
                    interpolated: false,
                })
                .collect();
            let raw = Trajectory::new(i as u32 + 1, entries)?;
            let reference = mean_unit_embedding(members.iter().filter_map(|t| t.mean_embedding()));
            Ok(validate_interpolation(
                &interpolate(&raw, cfg.gap_max),
                validator,
                reference.as_deref(),
                &vcfg,
            ))
        })
        .collect()
}

/// Full tracking run from raw detections.
pub fn track_sequence(
    detections: &[Detection],
    affinity: &AffinityModel,
    model: &CostModel,
    cfg: &EngineConfig,
    validator: Option<&dyn InterpolationValidator>,
) -> Result<TrackingResult> {
    cfg.validate()?;
    let tracklets = generate_tracklets(detections, affinity, cfg)?;
    let chains = associate(&tracklets, model, cfg)?;
    let trajectories = chains_to_trajectories(&chains, &tracklets, cfg, validator)?;
    Ok(TrackingResult {
        tracklets,
        chains,
        trajectories,
    })
}
