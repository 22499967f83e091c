//! Domain types shared by every stage of the tracker.

use crate::error::{Error, Result};

/// Frame numbers are 1-based, as in MOTChallenge files.
pub type Frame = u32;

/// Axis-aligned box in continuous pixel coordinates: left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        debug_assert!(w > 0.0 && h > 0.0, "box must have positive size");
        Self { x, y, w, h }
    }

    /// Checked constructor for boxes coming from untrusted input.
    pub fn try_new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() || !w.is_finite() || !h.is_finite() {
            return Err(Error::Precondition(format!(
                "box ({x}, {y}, {w}, {h}) must be finite with positive size"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Per-coordinate linear blend, `t = 0` gives `self`.
    pub fn lerp(&self, other: &BoundingBox, t: f64) -> BoundingBox {
        BoundingBox {
            x: self.x + (other.x - self.x) * t,
            y: self.y + (other.y - self.y) * t,
            w: self.w + (other.w - self.w) * t,
            h: self.h + (other.h - self.h) * t,
        }
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Scale-normalised offset between two boxes. Position terms use the
/// geometric mean of the two sizes; size terms are relative to `p2`.
pub fn relative_position_distance(p1: &BoundingBox, p2: &BoundingBox) -> [f64; 4] {
    [
        (p1.x - p2.x).abs() / (p1.w * p2.w).sqrt(),
        (p1.y - p2.y).abs() / (p1.h * p2.h).sqrt(),
        (p1.w - p2.w).abs() / p2.w,
        (p1.h - p2.h).abs() / p2.h,
    ]
}

/// One scored box in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: Frame,
    pub bbox: BoundingBox,
    /// Raw detector confidence, unbounded.
    pub det_score: f64,
    /// Probability that the box contains a person, in [0, 1].
    pub humanity: f64,
    /// Unit-norm appearance embedding.
    pub embedding: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(frame: Frame, bbox: BoundingBox, det_score: f64, humanity: f64) -> Self {
        Self {
            frame,
            bbox,
            det_score,
            humanity,
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame < 1 {
            return Err(Error::Precondition("frames are 1-based".into()));
        }
        if !(0.0..=1.0).contains(&self.humanity) {
            return Err(Error::Precondition(format!(
                "humanity {} outside [0, 1]",
                self.humanity
            )));
        }
        if let Some(z) = &self.embedding {
            let n = l2_norm(z);
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::Precondition(format!("embedding norm {n} is not 1")));
            }
        }
        Ok(())
    }
}

pub type TrackletId = usize;

/// Detections in consecutive frames believed to share one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: TrackletId,
    detections: Vec<Detection>,
    mean_embedding: Option<Vec<f64>>,
}

impl Tracklet {
    pub fn new(id: TrackletId, detections: Vec<Detection>) -> Result<Self> {
        if detections.is_empty() {
            return Err(Error::Precondition("tracklet must not be empty".into()));
        }
        for pair in detections.windows(2) {
            if pair[1].frame != pair[0].frame + 1 {
                return Err(Error::Precondition(format!(
                    "tracklet {id} frames {} -> {} are not consecutive",
                    pair[0].frame, pair[1].frame
                )));
            }
        }
        let mean_embedding = mean_unit_embedding(detections.iter().filter_map(|d| d.embedding.as_deref()));
        Ok(Self {
            id,
            detections,
            mean_embedding,
        })
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn head_frame(&self) -> Frame {
        self.detections[0].frame
    }

    pub fn tail_frame(&self) -> Frame {
        self.detections[self.detections.len() - 1].frame
    }

    pub fn head(&self) -> &Detection {
        &self.detections[0]
    }

    pub fn tail(&self) -> &Detection {
        &self.detections[self.detections.len() - 1]
    }

    pub fn mean_embedding(&self) -> Option<&[f64]> {
        self.mean_embedding.as_deref()
    }

    /// True when the frame span of the tracklet intersects `[start, end]`.
    pub fn overlaps_span(&self, start: Frame, end: Frame) -> bool {
        self.head_frame() <= end && self.tail_frame() >= start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub frame: Frame,
    pub bbox: BoundingBox,
    pub interpolated: bool,
}

/// A final per-identity track.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub identity: u32,
    pub entries: Vec<TrajectoryEntry>,
}

impl Trajectory {
    pub fn new(identity: u32, entries: Vec<TrajectoryEntry>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[1].frame <= pair[0].frame {
                return Err(Error::Precondition(format!(
                    "trajectory {identity} frames not strictly increasing at {}",
                    pair[1].frame
                )));
            }
        }
        Ok(Self { identity, entries })
    }

    pub fn from_boxes(identity: u32, boxes: impl IntoIterator<Item = (Frame, BoundingBox)>) -> Result<Self> {
        let entries = boxes
            .into_iter()
            .map(|(frame, bbox)| TrajectoryEntry {
                frame,
                bbox,
                interpolated: false,
            })
            .collect();
        Self::new(identity, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn box_at(&self, frame: Frame) -> Option<&BoundingBox> {
        self.entries
            .binary_search_by_key(&frame, |e| e.frame)
            .ok()
            .map(|i| &self.entries[i].bbox)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Average of unit vectors, projected back onto the sphere.
pub fn mean_unit_embedding<'a>(embeddings: impl Iterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    for z in embeddings {
        match acc.as_mut() {
            None => acc = Some(z.to_vec()),
            Some(a) => a.iter_mut().zip(z).for_each(|(a, b)| *a += b),
        }
    }
    acc.map(|mut a| {
        normalize(&mut a);
        a
    })
}

/// Median with the even-length convention of averaging the middle pair.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
