//! Constant-velocity Kalman smoothing of a tracklet's boxes.
//!
//! State is `(x, y, w, h, vx, vy, vw, vh)`; the measurement is the full box.
//! Noise scales with box height. `fit_forward` runs the filter in frame
//! order and ends at the tail; `fit_backward` consumes the boxes in reverse
//! and ends at the head, so its velocity points into the past.

use nalgebra::{SMatrix, SVector};

use crate::types::{BoundingBox, Tracklet};

type Vec8 = SVector<f64, 8>;
type Mat8 = SMatrix<f64, 8, 8>;
type Mat4x8 = SMatrix<f64, 4, 8>;
type Mat4 = SMatrix<f64, 4, 4>;

/// Smallest width/height a prediction can produce.
pub const MIN_BOX_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    /// Measurement std as a fraction of box height.
    pub measurement_std: f64,
    /// Per-step process std as a fraction of box height.
    pub process_std: f64,
    /// Initial velocity std as a fraction of box height. Large values make
    /// the prior on velocity effectively uninformative.
    pub initial_velocity_std: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            measurement_std: 1.0 / 20.0,
            process_std: 1.0 / 160.0,
            initial_velocity_std: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    mean: Vec8,
    covariance: Mat8,
}

impl KalmanState {
    fn initial(b: &BoundingBox, cfg: &KalmanConfig) -> Self {
        let pos_std = 2.0 * cfg.measurement_std * b.h;
        let vel_std = cfg.initial_velocity_std * b.h;
        let mut diag = Vec8::zeros();
        for i in 0..4 {
            diag[i] = pos_std * pos_std;
            diag[i + 4] = vel_std * vel_std;
        }
        Self {
            mean: Vec8::from_column_slice(&[b.x, b.y, b.w, b.h, 0.0, 0.0, 0.0, 0.0]),
            covariance: Mat8::from_diagonal(&diag),
        }
    }

    /// Build a state directly; used by tests and callers with external estimates.
    pub fn from_parts(position: BoundingBox, velocity: [f64; 4], covariance: [[f64; 8]; 8]) -> Self {
        let mut mean = Vec8::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from_slice(&position.as_array());
        mean.fixed_rows_mut::<4>(4).copy_from_slice(&velocity);
        Self {
            mean,
            covariance: Mat8::from_fn(|r, c| covariance[r][c]),
        }
    }

    pub fn position(&self) -> BoundingBox {
        BoundingBox {
            x: self.mean[0],
            y: self.mean[1],
            w: self.mean[2].max(MIN_BOX_SIZE),
            h: self.mean[3].max(MIN_BOX_SIZE),
        }
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[4], self.mean[5], self.mean[6], self.mean[7]]
    }

    pub fn covariance(&self) -> [[f64; 8]; 8] {
        let mut out = [[0.0; 8]; 8];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.covariance[(r, c)];
            }
        }
        out
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        self.covariance.symmetric_eigenvalues().min()
    }

    /// Propagates mean and covariance `dt` steps.
    pub fn propagate(&self, dt: u32, cfg: &KalmanConfig) -> KalmanState {
        let mut s = self.clone();
        for _ in 0..dt {
            s = s.step(cfg);
        }
        s
    }

    fn step(&self, cfg: &KalmanConfig) -> KalmanState {
        let f = transition(1.0);
        let q_std = cfg.process_std * self.mean[3].max(MIN_BOX_SIZE);
        let q = Mat8::identity() * (q_std * q_std);
        let covariance = symmetrize(f * self.covariance * f.transpose() + q);
        KalmanState {
            mean: f * self.mean,
            covariance,
        }
    }

    fn update(&self, z: &BoundingBox, cfg: &KalmanConfig) -> KalmanState {
        let h = Mat4x8::from_fn(|r, c| if r == c { 1.0 } else { 0.0 });
        let r_std = cfg.measurement_std * z.h;
        let r = Mat4::identity() * (r_std * r_std);
        let innovation = SVector::<f64, 4>::from_column_slice(&z.as_array()) - h * self.mean;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        let k = self.covariance * h.transpose() * s_inv;
        let i_kh = Mat8::identity() - k * h;
        // Joseph form keeps the covariance symmetric positive semi-definite.
        let covariance = symmetrize(i_kh * self.covariance * i_kh.transpose() + k * r * k.transpose());
        KalmanState {
            mean: self.mean + k * innovation,
            covariance,
        }
    }
}

fn transition(dt: f64) -> Mat8 {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = dt;
    }
    f
}

fn symmetrize(m: Mat8) -> Mat8 {
    (m + m.transpose()) * 0.5
}

fn fit<'a>(boxes: impl Iterator<Item = &'a BoundingBox>, cfg: &KalmanConfig) -> KalmanState {
    let mut boxes = boxes;
    let first = boxes.next().expect("tracklets are non-empty");
    let mut state = KalmanState::initial(first, cfg);
    for b in boxes {
        state = state.step(cfg).update(b, cfg);
    }
    state
}

/// Filters the tracklet in frame order; the state refers to the tail frame.
pub fn fit_forward(tracklet: &Tracklet, cfg: &KalmanConfig) -> KalmanState {
    fit(tracklet.detections().iter().map(|d| &d.bbox), cfg)
}

/// Filters the tracklet in reverse frame order; the state refers to the head
/// frame and `predict` extrapolates backwards in time.
pub fn fit_backward(tracklet: &Tracklet, cfg: &KalmanConfig) -> KalmanState {
    fit(tracklet.detections().iter().rev().map(|d| &d.bbox), cfg)
}

/// Mean box `dt` steps ahead (in the state's own time direction).
pub fn predict(state: &KalmanState, dt: u32) -> BoundingBox {
    let dt = dt as f64;
    let m = &state.mean;
    BoundingBox {
        x: m[0] + m[4] * dt,
        y: m[1] + m[5] * dt,
        w: (m[2] + m[6] * dt).max(MIN_BOX_SIZE),
        h: (m[3] + m[7] * dt).max(MIN_BOX_SIZE),
    }
}
