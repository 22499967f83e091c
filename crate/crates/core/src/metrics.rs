//! CLEAR-MOT evaluation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::assignment::{solve_assignment, CostMatrix, Objective};
use crate::error::{Error, Result};
use crate::types::{iou, BoundingBox, Frame, Trajectory};

pub const DEFAULT_IOU_MIN: f64 = 0.5;
pub const MOSTLY_TRACKED: f64 = 0.8;
pub const MOSTLY_LOST: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatches {
    pub frame: Frame,
    /// (ground-truth identity, hypothesis identity).
    pub pairs: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mota: f64,
    pub motp: f64,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub gt_count: usize,
    pub matches: usize,
    /// Percentages of ground-truth trajectories.
    pub mt: f64,
    pub ml: f64,
    pub gt_tracks: usize,
    pub per_frame: Vec<FrameMatches>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "mota,motp,fp,fn,ids,gt,mt,ml";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{},{},{},{},{:.2},{:.2}",
            self.mota, self.motp, self.fp, self.fn_, self.ids, self.gt_count, self.mt, self.ml
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn to_table(&self) -> String {
        let cols = [
            ("MOTA", format!("{:.1}", 100.0 * self.mota)),
            ("MOTP", format!("{:.1}", 100.0 * self.motp)),
            ("MT", format!("{:.1}%", self.mt)),
            ("ML", format!("{:.1}%", self.ml)),
            ("FP", self.fp.to_string()),
            ("FN", self.fn_.to_string()),
            ("IDS", self.ids.to_string()),
            ("GT", self.gt_count.to_string()),
        ];
        let mut head = String::new();
        let mut vals = String::new();
        for (name, v) in &cols {
            let w = name.len().max(v.len());
            let _ = write!(head, "{name:>w$}  ");
            let _ = write!(vals, "{v:>w$}  ");
        }
        format!("{}\n{}\n", head.trim_end(), vals.trim_end())
    }
}

fn by_frame(tracks: &[Trajectory]) -> HashMap<Frame, Vec<(u32, BoundingBox)>> {
    let mut m: HashMap<Frame, Vec<(u32, BoundingBox)>> = HashMap::new();
    for t in tracks {
        for e in &t.entries {
            m.entry(e.frame).or_default().push((t.identity, e.bbox));
        }
    }
    m
}

fn check_unique(tracks: &[Trajectory], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for t in tracks {
        if !seen.insert(t.identity) {
            return Err(Error::Evaluation(format!(
                "{what} identity {} appears twice",
                t.identity
            )));
        }
    }
    Ok(())
}

/// Matches hypotheses to ground truth frame by frame. Pairs matched in the
/// previous frame are kept while their overlap stays at `iou_min`; the rest
/// are matched by maximum total IOU. A ground-truth track whose matched
/// hypothesis identity changes counts one identity switch.
pub fn evaluate(hypotheses: &[Trajectory], ground_truth: &[Trajectory], iou_min: f64) -> Result<EvalReport> {
    check_unique(hypotheses, "hypothesis")?;
    check_unique(ground_truth, "ground-truth")?;
    let gt_count: usize = ground_truth.iter().map(Trajectory::len).sum();
    if gt_count == 0 {
        return Err(Error::Evaluation("no ground-truth boxes; MOTA is undefined".into()));
    }
    let gt_frames = by_frame(ground_truth);
    let hyp_frames = by_frame(hypotheses);
    let mut frames: Vec<Frame> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    frames.sort_unstable();
    frames.dedup();

    let empty = Vec::new();
    let mut previous: HashMap<u32, u32> = HashMap::new();
    let mut last_hyp: HashMap<u32, u32> = HashMap::new();
    let mut matched_frames: HashMap<u32, usize> = HashMap::new();
    let (mut fp, mut fn_, mut ids, mut matches, mut iou_sum) = (0, 0, 0, 0, 0.0);
    let mut per_frame = Vec::with_capacity(frames.len());
    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let h = hyp_frames.get(&f).unwrap_or(&empty);
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        for (gi, (gid, gb)) in g.iter().enumerate() {
            if let Some(&hid) = previous.get(gid) {
                if let Some(hi) = h.iter().position(|(id, _)| *id == hid) {
                    if iou(gb, &h[hi].1) >= iou_min {
                        pairs.push((gi, hi));
                        g_used[gi] = true;
                        h_used[hi] = true;
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&i| !h_used[i]).collect();
        let m = CostMatrix::from_fn(free_g.len(), free_h.len(), |r, c| {
            let v = iou(&g[free_g[r]].1, &h[free_h[c]].1);
            (v >= iou_min).then_some(v)
        });
        pairs.extend(
            solve_assignment(&m, Objective::Maximize)
                .into_iter()
                .map(|(r, c)| (free_g[r], free_h[c])),
        );
        pairs.sort_unstable();

        previous.clear();
        let mut frame_pairs = Vec::with_capacity(pairs.len());
        for &(gi, hi) in &pairs {
            let (gid, hid) = (g[gi].0, h[hi].0);
            if let Some(&old) = last_hyp.get(&gid) {
                if old != hid {
                    ids += 1;
                }
            }
            last_hyp.insert(gid, hid);
            previous.insert(gid, hid);
            *matched_frames.entry(gid).or_default() += 1;
            iou_sum += iou(&g[gi].1, &h[hi].1);
            frame_pairs.push((gid, hid));
        }
        matches += pairs.len();
        fp += h.len() - pairs.len();
        fn_ += g.len() - pairs.len();
        per_frame.push(FrameMatches {
            frame: f,
            pairs: frame_pairs,
        });
    }

    let tracks = ground_truth.iter().filter(|t| !t.is_empty()).count();
    let (mut mt, mut ml) = (0, 0);
    for t in ground_truth.iter().filter(|t| !t.is_empty()) {
        let ratio = *matched_frames.get(&t.identity).unwrap_or(&0) as f64 / t.len() as f64;
        if ratio >= MOSTLY_TRACKED {
            mt += 1;
        }
        if ratio <= MOSTLY_LOST {
            ml += 1;
        }
    }
    Ok(EvalReport {
        mota: 1.0 - (fp + fn_ + ids) as f64 / gt_count as f64,
        motp: if matches > 0 { iou_sum / matches as f64 } else { 0.0 },
        fp,
        fn_,
        ids,
        gt_count,
        matches,
        mt: 100.0 * mt as f64 / tracks.max(1) as f64,
        ml: 100.0 * ml as f64 / tracks.max(1) as f64,
        gt_tracks: tracks,
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(id: u32, frames: std::ops::RangeInclusive<u32>, y: f64) -> Trajectory {
        Trajectory::from_boxes(
            id,
            frames.map(|f| (f, BoundingBox::new(10.0 * f as f64, y, 20.0, 40.0))),
        )
        .unwrap()
    }

    #[test]
    fn perfect_tracker() {
        let gt = vec![track(1, 1..=10, 0.0), track(2, 3..=8, 200.0)];
        let r = evaluate(&gt, &gt, DEFAULT_IOU_MIN).unwrap();
        assert_eq!((r.mota, r.ids, r.fp, r.fn_), (1.0, 0, 0, 0));
        assert_eq!((r.mt, r.ml), (100.0, 0.0));
        assert!((r.motp - 1.0).abs() < 1e-12);
    }

    #[test]
    fn handcrafted_counts() {
        // 10 tracks of 10 boxes = 100 gt boxes.
        let gt: Vec<Trajectory> = (0..10).map(|i| track(i + 1, 1..=10, 100.0 * i as f64)).collect();
        let mut hyp: Vec<Trajectory> = gt.clone();
        // 10 misses: drop the last box of every track.
        for t in &mut hyp {
            t.entries.pop();
        }
        // One switch: track 1 continues under a new label from frame 6.
        let tail = hyp[0].entries.split_off(5);
        hyp.push(Trajectory::new(100, tail).unwrap());
        // 5 false positives far away.
        hyp.push(track(200, 1..=5, 5000.0));
        let r = evaluate(&hyp, &gt, DEFAULT_IOU_MIN).unwrap();
        assert_eq!((r.gt_count, r.fp, r.fn_, r.ids), (100, 5, 10, 1));
        assert!((r.mota - 0.84).abs() < 1e-12);
    }

    #[test]
    fn label_swap_counts_two_switches() {
        let gt = vec![track(1, 1..=4, 0.0), track(2, 1..=4, 300.0)];
        let swap = |id: u32, first: f64, second: f64| {
            Trajectory::from_boxes(
                id,
                (1..=4).map(|f| {
                    (
                        f,
                        BoundingBox::new(10.0 * f as f64, if f <= 2 { first } else { second }, 20.0, 40.0),
                    )
                }),
            )
            .unwrap()
        };
        let hyp = vec![swap(7, 0.0, 300.0), swap(8, 300.0, 0.0)];
        let r = evaluate(&hyp, &gt, DEFAULT_IOU_MIN).unwrap();
        assert_eq!((r.ids, r.fp, r.fn_), (2, 0, 0));
    }

    #[test]
    fn deleting_a_box_adds_one_miss() {
        let gt = vec![track(1, 1..=10, 0.0), track(2, 1..=10, 200.0)];
        let mut hyp = gt.clone();
        hyp[1].entries.remove(4);
        let r = evaluate(&hyp, &gt, DEFAULT_IOU_MIN).unwrap();
        assert_eq!((r.fn_, r.fp, r.ids), (1, 0, 0));
    }

    #[test]
    fn relabeling_keeps_mota() {
        let gt = vec![track(1, 1..=10, 0.0), track(2, 1..=10, 200.0), track(3, 4..=9, 400.0)];
        let mut hyp = gt.clone();
        hyp[2].entries.truncate(3);
        hyp.push(track(9, 2..=3, 900.0));
        let a = evaluate(&hyp, &gt, DEFAULT_IOU_MIN).unwrap();
        for (t, id) in hyp.iter_mut().zip([31, 17, 5, 2]) {
            t.identity = id;
        }
        let b = evaluate(&hyp, &gt, DEFAULT_IOU_MIN).unwrap();
        assert_eq!(a.mota, b.mota);
        for fm in &a.per_frame {
            let hyps = hyp.iter().filter(|t| t.box_at(fm.frame).is_some()).count();
            let gts = gt.iter().filter(|t| t.box_at(fm.frame).is_some()).count();
            assert!(fm.pairs.len() <= hyps.min(gts));
        }
        assert_eq!(a.fp + a.matches, hyp.iter().map(Trajectory::len).sum::<usize>());
        assert_eq!(a.fn_ + a.matches, a.gt_count);
    }

    #[test]
    fn mt_ml_thresholds() {
        let gt = vec![track(1, 1..=10, 0.0), track(2, 1..=10, 200.0), track(3, 1..=10, 400.0)];
        let hyp = vec![track(1, 1..=8, 0.0), track(2, 1..=2, 200.0), track(3, 1..=5, 400.0)];
        let r = evaluate(&hyp, &gt, DEFAULT_IOU_MIN).unwrap();
        assert!((r.mt - 100.0 / 3.0).abs() < 1e-9);
        assert!((r.ml - 100.0 / 3.0).abs() < 1e-9);
        assert!(r.mt + r.ml <= 100.0);
    }

    #[test]
    fn empty_ground_truth_is_an_error() {
        assert!(matches!(evaluate(&[], &[], 0.5), Err(Error::Evaluation(_))));
    }

    #[test]
    fn report_formats() {
        let gt = vec![track(1, 1..=10, 0.0)];
        let r = evaluate(&gt, &gt, DEFAULT_IOU_MIN).unwrap();
        assert!(r.to_table().contains("MOTA"));
        assert_eq!(r.to_csv().lines().count(), 2);
        assert!(r.to_csv().starts_with("mota,"));
    }
}
