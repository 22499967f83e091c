//! Multi-object tracking by tracklet association.
//!
//! Detections are cleaned up per frame, chained into short tracklets by a
//! conservative adjacent-frame matcher, and tracklets are then linked into
//! trajectories by solving a min-cost flow over sliding windows. The flow costs
//! come from two small networks trained through the solver.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod config;
pub mod cost_model;
pub mod error;
pub mod experiment;
pub mod features;
pub mod flow;
pub mod io;
pub mod kalman;
pub mod labels;
pub mod metrics;
pub mod nnet;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod tracklets;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
