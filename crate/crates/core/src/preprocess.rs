//! Proposal selection: duplicate suppression and joint score filtering.

use crate::types::{iou, Detection};

/// Greedy non-maximum suppression by descending `det_score`. Detections must
/// share a frame. Equal scores keep input order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    debug_assert!(detections.windows(2).all(|w| w[0].frame == w[1].frame));
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .det_score
            .total_cmp(&detections[a].det_score)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| iou(&detections[k].bbox, &detections[i].bbox) < iou_threshold)
        {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| detections[i].clone()).collect()
}

/// Drops a detection only when it is weak on both humanity and detector score.
pub fn score_filter(detections: &[Detection], humanity_min: f64, det_score_min: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| !(d.humanity < humanity_min && d.det_score < det_score_min))
        .cloned()
        .collect()
}

/// Stand-in humanity for inputs that only carry a detector score.
pub fn humanity_from_score(det_score: f64) -> f64 {
    1.0 / (1.0 + (-det_score).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub nms_iou: f64,
    pub humanity_min: f64,
    pub det_score_min: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.7,
            humanity_min: 0.1,
            det_score_min: 0.0,
        }
    }
}

/// Score filter followed by NMS on one frame.
pub fn preprocess_frame(detections: &[Detection], cfg: &PreprocessConfig) -> Vec<Detection> {
    nms(
        &score_filter(detections, cfg.humanity_min, cfg.det_score_min),
        cfg.nms_iou,
    )
}
