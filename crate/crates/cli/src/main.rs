//! `flowtrack` command-line driver.

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowtrack::config::EngineConfig;
use flowtrack::trainer::Weighting;

#[derive(Parser, Debug)]
#[command(name = "flowtrack", version, about = "Tracklet association by learned min-cost flow")]
pub struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Engine config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override as `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    engine: EngineFlags,
    #[command(subcommand)]
    command: Command,
}

/// Shortcuts for the most used config keys.
#[derive(Args, Debug, Default)]
pub struct EngineFlags {
    #[arg(long, global = true)]
    nms_iou: Option<f64>,
    #[arg(long, global = true)]
    humanity_min: Option<f64>,
    #[arg(long, global = true)]
    det_score_min: Option<f64>,
    #[arg(long, global = true)]
    theta_high: Option<f64>,
    #[arg(long, global = true)]
    margin: Option<f64>,
    #[arg(long, global = true)]
    window: Option<u32>,
    #[arg(long, global = true)]
    step: Option<u32>,
    #[arg(long, global = true)]
    gap_max: Option<u32>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    weighting: Option<Weighting>,
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = 20)]
    identities: usize,
    #[arg(long, default_value_t = 300)]
    frames: u32,
    #[arg(long, default_value_t = 0.1)]
    p_miss: f64,
    /// Mean false positives per frame.
    #[arg(long, default_value_t = 0.05)]
    fp_rate: f64,
    /// Box noise as a fraction of box size.
    #[arg(long, default_value_t = 0.05)]
    jitter: f64,
    #[arg(long, default_value_t = 4)]
    occlusions: usize,
    #[arg(long, default_value_t = 5.0)]
    occlusion_mean: f64,
    #[arg(long, default_value_t = 0.05)]
    embedding_noise: f64,
    /// No misses, false positives, jitter or occlusions.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic sequence directory.
    Synth {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply NMS and score filtering; writes a new sequence directory.
    Preprocess {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Link detections of adjacent frames into tracklets.
    Tracklets {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        affinity: PathBuf,
        /// Tracklets as a result file, one identity per tracklet.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the adjacent-frame affinity model on labelled sequences.
    TrainAffinity {
        #[arg(long = "train", required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the association costs; writes model, training log and config.
    TrainAssoc {
        #[arg(long = "train", required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        /// Held-out sequence used to keep the best iteration.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        affinity: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a sequence; writes results, interpolation flags and config.
    Track {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        affinity: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a result file against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value_t = flowtrack::metrics::DEFAULT_IOU_MIN)]
        iou_min: f64,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sweep window sizes and loss weightings on synthetic data.
    Ablate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100])]
        windows: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = Weighting::ALL)]
        schemes: Vec<Weighting>,
        #[arg(long, default_value_t = 2)]
        train_sequences: usize,
        /// Output directory for the CSV and the effective config.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw trajectories as x-position against frame in SVG.
    PlotTracks {
        #[arg(long)]
        results: PathBuf,
        /// Interpolation flags written by `track`; those segments are dashed.
        #[arg(long)]
        interpolated: Option<PathBuf>,
        /// Ground truth drawn underneath in grey.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Cli {
    /// Defaults, then the config file, then flags.
    fn engine_config(&self) -> anyhow::Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(p) => flowtrack::io::load_config(p)?,
            None => EngineConfig::default(),
        };
        let f = &self.engine;
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k, v));
            }
        };
        push("nms_iou", f.nms_iou.map(|v| v.to_string()));
        push("humanity_min", f.humanity_min.map(|v| v.to_string()));
        push("det_score_min", f.det_score_min.map(|v| v.to_string()));
        push("theta_high", f.theta_high.map(|v| v.to_string()));
        push("margin", f.margin.map(|v| v.to_string()));
        push("window", f.window.map(|v| v.to_string()));
        push("step", f.step.map(|v| v.to_string()));
        push("gap_max", f.gap_max.map(|v| v.to_string()));
        push("iterations", f.iterations.map(|v| v.to_string()));
        push("weighting", f.weighting.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        for (k, v) in pairs {
            cfg.set(k, &v)?;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("override `{o}` is not `key=value`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = || -> anyhow::Result<()> {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.workers {
            anyhow::ensure!(n > 0, "--workers must be at least 1");
            pool = pool.num_threads(n);
        }
        let cfg = cli.engine_config()?;
        pool.build()?.install(|| commands::run(&cli.command, &cfg, cli.seed))
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
