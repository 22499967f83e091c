//! Ground-truth identity lookup for detections, shared by the affinity and
//! association trainers.

use std::collections::HashMap;

use crate::assignment::{solve_assignment, CostMatrix, Objective};
use crate::types::{iou, BoundingBox, Frame, Trajectory};

pub const LABEL_IOU: f64 = 0.5;

/// Ground-truth boxes indexed by frame.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthIndex {
    by_frame: HashMap<Frame, Vec<(u32, BoundingBox)>>,
}

impl GroundTruthIndex {
    pub fn new(gt: &[Trajectory]) -> Self {
        let mut by_frame: HashMap<Frame, Vec<(u32, BoundingBox)>> = HashMap::new();
        for t in gt {
            for e in &t.entries {
                by_frame.entry(e.frame).or_default().push((t.identity, e.bbox));
            }
        }
        for v in by_frame.values_mut() {
            v.sort_by_key(|(id, _)| *id);
        }
        Self { by_frame }
    }

    pub fn at(&self, frame: Frame) -> &[(u32, BoundingBox)] {
        self.by_frame.get(&frame).map_or(&[], Vec::as_slice)
    }

    /// One-to-one IOU matching of `boxes` (all in `frame`) against the ground
    /// truth of that frame; pairs below `LABEL_IOU` are not allowed.
    pub fn identities(&self, frame: Frame, boxes: &[BoundingBox]) -> Vec<Option<u32>> {
        let gt = self.at(frame);
        let m = CostMatrix::from_fn(boxes.len(), gt.len(), |r, c| {
            let v = iou(&boxes[r], &gt[c].1);
            (v >= LABEL_IOU).then_some(v)
        });
        let mut out = vec![None; boxes.len()];
        for (r, c) in solve_assignment(&m, Objective::Maximize) {
            out[r] = Some(gt[c].0);
        }
        out
    }
}
