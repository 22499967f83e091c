//! Engine configuration as flat `key = value` pairs.

use std::fmt::Write as _;

use crate::cost_model::{DEFAULT_BETA, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::kalman::KalmanConfig;
use crate::preprocess::PreprocessConfig;
use crate::tracklets::{AffinityTrainConfig, GateConfig};
use crate::trainer::{TrainConfig, Weighting};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub beta: f64,
    pub gamma: f64,
    /// Tracking window length in frames.
    pub window: u32,
    /// Tracking window step; `None` means a quarter window.
    pub step: Option<u32>,
    pub dt_max: u32,
    /// Longest gap (missing frames) that interpolation fills.
    pub gap_max: u32,
    pub nms_iou: f64,
    pub humanity_min: f64,
    pub det_score_min: f64,
    pub theta_high: f64,
    pub margin: f64,
    pub lr: f64,
    pub iterations: usize,
    pub weighting: Weighting,
    /// Training window step; `None` means half a window.
    pub train_step: Option<u32>,
    /// Iterations between validation-loss checks during training.
    pub validate_every: usize,
    /// Interpolated boxes below this humanity are dropped.
    pub interp_humanity_min: f64,
    /// Interpolated boxes farther than this from the track appearance are dropped.
    pub interp_distance_max: f64,
    pub affinity_epochs: usize,
    pub affinity_lr: f64,
    pub affinity_negatives: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            window: 30,
            step: None,
            dt_max: 30,
            gap_max: 30,
            nms_iou: 0.7,
            humanity_min: 0.1,
            det_score_min: 0.0,
            theta_high: 0.8,
            margin: 0.1,
            lr: 1e-3,
            iterations: 200,
            weighting: Weighting::Uniform,
            train_step: None,
            validate_every: 5,
            interp_humanity_min: 0.1,
            interp_distance_max: 1.0,
            affinity_epochs: 40,
            affinity_lr: 5e-3,
            affinity_negatives: 3,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub const KEYS: [&'static str; 22] = [
        "beta",
        "gamma",
        "window",
        "step",
        "dt_max",
        "gap_max",
        "nms_iou",
        "humanity_min",
        "det_score_min",
        "theta_high",
        "margin",
        "lr",
        "iterations",
        "weighting",
        "train_step",
        "validate_every",
        "interp_humanity_min",
        "interp_distance_max",
        "affinity_epochs",
        "affinity_lr",
        "affinity_negatives",
        "seed",
    ];

    pub fn step(&self) -> u32 {
        self.step.unwrap_or((self.window / 4).max(1))
    }

    pub fn train_step(&self) -> u32 {
        self.train_step.unwrap_or((self.window / 2).max(1))
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        fn auto(key: &str, value: &str) -> Result<Option<u32>> {
            if value == "auto" {
                Ok(None)
            } else {
                num(key, value).map(Some)
            }
        }
        match key {
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "step" => self.step = auto(key, value)?,
            "dt_max" => self.dt_max = num(key, value)?,
            "gap_max" => self.gap_max = num(key, value)?,
            "nms_iou" => self.nms_iou = num(key, value)?,
            "humanity_min" => self.humanity_min = num(key, value)?,
            "det_score_min" => self.det_score_min = num(key, value)?,
            "theta_high" => self.theta_high = num(key, value)?,
            "margin" => self.margin = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "weighting" => self.weighting = value.parse()?,
            "train_step" => self.train_step = auto(key, value)?,
            "validate_every" => self.validate_every = num(key, value)?,
            "interp_humanity_min" => self.interp_humanity_min = num(key, value)?,
            "interp_distance_max" => self.interp_distance_max = num(key, value)?,
            "affinity_epochs" => self.affinity_epochs = num(key, value)?,
            "affinity_lr" => self.affinity_lr = num(key, value)?,
            "affinity_negatives" => self.affinity_negatives = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, found `{line}`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        for (name, step) in [("step", self.step()), ("train_step", self.train_step())] {
            if step == 0 || step > self.window {
                return Err(Error::Config(format!("{name} {step} must be in 1..={}", self.window)));
            }
        }
        if self.validate_every == 0 {
            return Err(Error::Config("validate_every must be at least 1".into()));
        }
        if self.dt_max == 0 {
            return Err(Error::Config("dt_max must be at least 1".into()));
        }
        if self.beta.abs() > self.gamma / 2.0 || !(self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "beta {} must lie in [-gamma/2, gamma/2] with positive gamma {}",
                self.beta, self.gamma
            )));
        }
        Ok(())
    }

    /// Effective configuration with every key spelled out.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<u32>| v.map_or("auto".to_string(), |v| v.to_string());
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "step = {}", opt(self.step));
        let _ = writeln!(s, "dt_max = {}", self.dt_max);
        let _ = writeln!(s, "gap_max = {}", self.gap_max);
        let _ = writeln!(s, "nms_iou = {}", self.nms_iou);
        let _ = writeln!(s, "humanity_min = {}", self.humanity_min);
        let _ = writeln!(s, "det_score_min = {}", self.det_score_min);
        let _ = writeln!(s, "theta_high = {}", self.theta_high);
        let _ = writeln!(s, "margin = {}", self.margin);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "weighting = {}", self.weighting);
        let _ = writeln!(s, "train_step = {}", opt(self.train_step));
        let _ = writeln!(s, "validate_every = {}", self.validate_every);
        let _ = writeln!(s, "interp_humanity_min = {}", self.interp_humanity_min);
        let _ = writeln!(s, "interp_distance_max = {}", self.interp_distance_max);
        let _ = writeln!(s, "affinity_epochs = {}", self.affinity_epochs);
        let _ = writeln!(s, "affinity_lr = {}", self.affinity_lr);
        let _ = writeln!(s, "affinity_negatives = {}", self.affinity_negatives);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            nms_iou: self.nms_iou,
            humanity_min: self.humanity_min,
            det_score_min: self.det_score_min,
        }
    }

    pub fn gate(&self) -> GateConfig {
        GateConfig {
            theta_high: self.theta_high,
            margin: self.margin,
        }
    }

    pub fn kalman(&self) -> KalmanConfig {
        KalmanConfig::default()
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            iterations: self.iterations,
            window: self.window,
            step: self.train_step(),
            weighting: self.weighting,
            dt_max: self.dt_max,
            seed: self.seed,
            validate_every: self.validate_every,
        }
    }

    pub fn affinity_train(&self) -> AffinityTrainConfig {
        AffinityTrainConfig {
            epochs: self.affinity_epochs,
            lr: self.affinity_lr,
            seed: self.seed,
            ..AffinityTrainConfig::default()
        }
    }
}
