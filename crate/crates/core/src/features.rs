//! Tracklet-level features feeding the cost networks.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FlowGraph;
use crate::kalman::{fit_backward, fit_forward, predict, KalmanConfig, KalmanState};
use crate::tracklets::optional_appearance_distance;
use crate::types::{median, relative_position_distance, Tracklet};

pub const UNARY_INPUT_DIM: usize = 8;
pub const PAIRWISE_DIM: usize = 18;

/// Per-tracklet summary: median humanity, median detector score, length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnaryFeature {
    pub median_humanity: f64,
    pub median_det_score: f64,
    pub length: f64,
}

pub fn unary_feature(tracklet: &Tracklet) -> UnaryFeature {
    let h: Vec<f64> = tracklet.detections().iter().map(|d| d.humanity).collect();
    let s: Vec<f64> = tracklet.detections().iter().map(|d| d.det_score).collect();
    UnaryFeature {
        median_humanity: median(&h),
        median_det_score: median(&s),
        length: tracklet.len() as f64,
    }
}

/// The 8-wide unary network input: the three summary values, then min and
/// mean of humanity and score, then a constant 1.
pub fn unary_input(tracklet: &Tracklet) -> [f64; UNARY_INPUT_DIM] {
    let f = unary_feature(tracklet);
    let dets = tracklet.detections();
    let n = dets.len() as f64;
    let min_h = dets.iter().map(|d| d.humanity).fold(f64::INFINITY, f64::min);
    let min_s = dets.iter().map(|d| d.det_score).fold(f64::INFINITY, f64::min);
    let mean_h = dets.iter().map(|d| d.humanity).sum::<f64>() / n;
    let mean_s = dets.iter().map(|d| d.det_score).sum::<f64>() / n;
    [
        f.median_humanity,
        f.median_det_score,
        f.length,
        min_h,
        min_s,
        mean_h,
        mean_s,
        1.0,
    ]
}

/// Features of a candidate link from the tail of `i` to the head of `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseFeature {
    pub d_a: f64,
    /// Aspect ratio of the tail of `i` over the head of `j`.
    pub d_aspect: f64,
    /// Area of the tail of `i` over the head of `j`.
    pub d_area: f64,
    /// Position distances per frame of gap: Kalman-forward prediction vs head,
    /// tail vs Kalman-backward prediction, raw tail vs raw head.
    pub d_motion: [f64; 12],
    pub len_i: f64,
    pub len_j: f64,
    pub dt: f64,
}

impl PairwiseFeature {
    pub fn to_array(&self) -> [f64; PAIRWISE_DIM] {
        let mut out = [0.0; PAIRWISE_DIM];
        out[0] = self.d_a;
        out[1] = self.d_aspect;
        out[2] = self.d_area;
        out[3..15].copy_from_slice(&self.d_motion);
        out[15] = self.len_i;
        out[16] = self.len_j;
        out[17] = self.dt;
        out
    }
}

/// Kalman fits of a tracklet in both directions, computed once and reused
/// across all candidate links.
#[derive(Debug, Clone)]
pub struct MotionSummary {
    pub forward: KalmanState,
    pub backward: KalmanState,
}

impl MotionSummary {
    pub fn new(tracklet: &Tracklet, cfg: &KalmanConfig) -> Self {
        Self {
            forward: fit_forward(tracklet, cfg),
            backward: fit_backward(tracklet, cfg),
        }
    }
}

pub fn pairwise_feature(fi: &Tracklet, fj: &Tracklet, cfg: &KalmanConfig) -> Result<PairwiseFeature> {
    pairwise_feature_with(fi, &MotionSummary::new(fi, cfg), fj, &MotionSummary::new(fj, cfg))
}

pub fn pairwise_feature_with(
    fi: &Tracklet,
    mi: &MotionSummary,
    fj: &Tracklet,
    mj: &MotionSummary,
) -> Result<PairwiseFeature> {
    if fj.head_frame() <= fi.tail_frame() {
        return Err(Error::Precondition(format!(
            "tracklet {} (tail {}) does not precede tracklet {} (head {})",
            fi.id,
            fi.tail_frame(),
            fj.id,
            fj.head_frame()
        )));
    }
    let gap = fj.head_frame() - fi.tail_frame();
    let dt = gap as f64;
    let tail = fi.tail().bbox;
    let head = fj.head().bbox;
    let fwd = predict(&mi.forward, gap);
    let bwd = predict(&mj.backward, gap);
    let mut d_motion = [0.0; 12];
    for (k, (p, q)) in [(fwd, head), (tail, bwd), (tail, head)].iter().enumerate() {
        let d = relative_position_distance(p, q);
        for c in 0..4 {
            d_motion[4 * k + c] = d[c] / dt;
        }
    }
    Ok(PairwiseFeature {
        d_a: optional_appearance_distance(fi.mean_embedding(), fj.mean_embedding())?,
        d_aspect: tail.aspect_ratio() / head.aspect_ratio(),
        d_area: tail.area() / head.area(),
        d_motion,
        len_i: fi.len() as f64,
        len_j: fj.len() as f64,
        dt,
    })
}

/// Raw network inputs for every node and link edge of a graph, in graph
/// order. `tracklets` and `motion` are indexed by tracklet id.
#[derive(Debug, Clone, Default)]
pub struct GraphFeatures {
    pub unary: Vec<[f64; UNARY_INPUT_DIM]>,
    pub pairwise: Vec<PairwiseFeature>,
}

pub fn graph_features(graph: &FlowGraph, tracklets: &[Tracklet], motion: &[MotionSummary]) -> Result<GraphFeatures> {
    let ids = graph.node_ids();
    let unary = ids.iter().map(|&id| unary_input(&tracklets[id])).collect();
    let pairwise = graph
        .links()
        .par_iter()
        .map(|e| {
            let (i, j) = (ids[e.from], ids[e.to]);
            pairwise_feature_with(&tracklets[i], &motion[i], &tracklets[j], &motion[j])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphFeatures { unary, pairwise })
}

/// Kalman summaries for all tracklets, indexed like the input.
pub fn motion_summaries(tracklets: &[Tracklet], cfg: &KalmanConfig) -> Vec<MotionSummary> {
    tracklets.par_iter().map(|t| MotionSummary::new(t, cfg)).collect()
}
