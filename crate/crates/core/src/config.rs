//! Run configuration: named presets, a line-oriented `key = value` file
//! with dotted keys, and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bodycomp::{RecoveryConfig, TissueThresholds};
use crate::bodydetect::{BboxHyperParams, RegressorHeader, BODY_THRESHOLD};
use crate::diffusion::{DenoiserHeader, DenoiserHyperParams, Precision, ScheduleConfig};
use crate::error::{Error, Result};
use crate::fovsim::{SimulationConfig, DEFAULT_DFOV_RANGE, DEFAULT_RFOV_RANGE};
use crate::imagecore::SOFT_TISSUE_WINDOW;
use crate::phantom::{DEFAULT_NOISE_HU, DESK_RESOLUTION, MAX_NOISE_HU};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    /// Side of the square slices the models operate on.
    pub resolution: usize,
    pub seed: u64,
    pub noise_hu: f64,
    pub rfov_range: (f64, f64),
    pub dfov_range: (f64, f64),
    pub window: (f64, f64),
    pub margin: usize,
    pub body_threshold: f32,
    pub thresholds: TissueThresholds,
    pub schedule: ScheduleConfig,
    pub channels: Vec<usize>,
    pub time_dim: usize,
    pub embed_dim: usize,
    pub train_steps: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub ema_decay: f64,
    pub bbox_resolution: usize,
    pub bbox_epochs: usize,
    pub bbox_batch: usize,
    pub bbox_lr: f64,
    /// Candidates for multiple inference.
    pub n: usize,
}

/// Preset names accepted by [`RunConfig::preset`].
pub const PRESETS: [&str; 2] = ["desk", "paper"];

impl RunConfig {
    /// Small CPU-sized setup: 64 px slices, `T = 250`.
    pub fn desk() -> Self {
        let den = DenoiserHyperParams::default();
        let bbox = BboxHyperParams::default();
        Self {
            preset: "desk".into(),
            resolution: DESK_RESOLUTION,
            seed: 0,
            noise_hu: DEFAULT_NOISE_HU,
            rfov_range: DEFAULT_RFOV_RANGE,
            dfov_range: DEFAULT_DFOV_RANGE,
            window: SOFT_TISSUE_WINDOW,
            margin: 4,
            body_threshold: BODY_THRESHOLD,
            thresholds: TissueThresholds::default(),
            schedule: ScheduleConfig::default(),
            channels: den.header.channels.clone(),
            time_dim: den.header.time_dim,
            embed_dim: den.header.embed_dim,
            train_steps: den.steps,
            train_batch: den.batch_size,
            train_lr: den.lr,
            ema_decay: den.ema_decay,
            bbox_resolution: bbox.header.input_resolution,
            bbox_epochs: bbox.epochs,
            bbox_batch: bbox.batch_size,
            bbox_lr: bbox.lr,
            n: 5,
        }
    }

    /// Full-size setup (256 px, `T = 2000`, wider network). It validates but
    /// is far beyond a CPU budget, and the phantom generator only renders
    /// the desk resolution.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            resolution: 256,
            schedule: ScheduleConfig {
                steps: 2000,
                beta_lo: 1e-6,
                beta_hi: 0.01,
            },
            channels: vec![64, 128, 256, 512],
            time_dim: 64,
            embed_dim: 256,
            train_steps: 1_000_000,
            train_batch: 8,
            train_lr: 1e-4,
            ema_decay: 0.9999,
            bbox_resolution: 128,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        }
    }

    /// Apply one dotted-key assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "resolution" => self.resolution = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "phantom.noise_hu" => self.noise_hu = parse(key, v)?,
            "fov.rfov" => self.rfov_range = parse_range(key, v)?,
            "fov.dfov" => self.dfov_range = parse_range(key, v)?,
            "window" => self.window = parse_range(key, v)?,
            "zoom.margin" => self.margin = parse(key, v)?,
            "body.threshold" => self.body_threshold = parse(key, v)?,
            "tissue.sat" => self.thresholds.sat = parse_range(key, v)?,
            "tissue.muscle" => self.thresholds.muscle = parse_range(key, v)?,
            "diffusion.T" => self.schedule.steps = parse(key, v)?,
            "diffusion.beta_lo" => self.schedule.beta_lo = parse(key, v)?,
            "diffusion.beta_hi" => self.schedule.beta_hi = parse(key, v)?,
            "diffusion.channels" => self.channels = v.split(',').map(|c| parse(key, c.trim())).collect::<Result<_>>()?,
            "diffusion.time_dim" => self.time_dim = parse(key, v)?,
            "diffusion.embed_dim" => self.embed_dim = parse(key, v)?,
            "train.steps" => self.train_steps = parse(key, v)?,
            "train.batch_size" => self.train_batch = parse(key, v)?,
            "train.lr" => self.train_lr = parse(key, v)?,
            "train.ema_decay" => self.ema_decay = parse(key, v)?,
            "bbox.resolution" => self.bbox_resolution = parse(key, v)?,
            "bbox.epochs" => self.bbox_epochs = parse(key, v)?,
            "bbox.batch_size" => self.bbox_batch = parse(key, v)?,
            "bbox.lr" => self.bbox_lr = parse(key, v)?,
            "infer.n" => self.n = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a config file: one `key = value` per line, `#` comments and
    /// blank lines ignored. A `preset = name` line resets everything set
    /// before it, unless `honor_preset` is false, in which case it is skipped.
    pub fn apply_text(&mut self, text: &str, honor_preset: bool) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
            if k.trim() == "preset" {
                let base = Self::preset(v.trim())?;
                if honor_preset {
                    *self = base;
                }
                continue;
            }
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path, honor_preset: bool) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, honor_preset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 || !self.resolution.is_power_of_two() {
            return Err(Error::Config(format!("resolution {} must be a power of two >= 32", self.resolution)));
        }
        self.simulation().validate()?;
        check_ordered("window", self.window)?;
        check_ordered("tissue.sat", self.thresholds.sat)?;
        check_ordered("tissue.muscle", self.thresholds.muscle)?;
        if !(0.0..=MAX_NOISE_HU).contains(&self.noise_hu) {
            return Err(Error::Config(format!("phantom.noise_hu must lie in [0, {MAX_NOISE_HU}]")));
        }
        if 2 * self.margin >= self.resolution {
            return Err(Error::Config(format!("zoom.margin {} leaves no room", self.margin)));
        }
        if self.n == 0 || self.train_batch == 0 || self.bbox_batch == 0 {
            return Err(Error::Config("infer.n and batch sizes must be positive".into()));
        }
        if !(self.train_lr > 0.0 && self.bbox_lr > 0.0) || !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("learning rates must be positive and ema_decay in [0, 1)".into()));
        }
        self.schedule.build_for_sampling()?;
        self.denoiser_header().validate()?;
        Ok(())
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            rfov_range: self.rfov_range,
            dfov_range: self.dfov_range,
            margin: self.margin,
            body_threshold: self.body_threshold,
            detector_resolution: self.bbox_resolution,
            window: self.window,
        }
    }

    pub fn denoiser_header(&self) -> DenoiserHeader {
        DenoiserHeader {
            resolution: self.resolution,
            channels: self.channels.clone(),
            time_dim: self.time_dim,
            embed_dim: self.embed_dim,
            schedule: self.schedule,
        }
    }

    pub fn denoiser_hyper(&self) -> DenoiserHyperParams {
        DenoiserHyperParams {
            steps: self.train_steps,
            batch_size: self.train_batch,
            lr: self.train_lr,
            ema_decay: self.ema_decay,
            precision: Precision::F32,
            header: self.denoiser_header(),
        }
    }

    pub fn bbox_hyper(&self) -> BboxHyperParams {
        BboxHyperParams {
            epochs: self.bbox_epochs,
            batch_size: self.bbox_batch,
            lr: self.bbox_lr,
            header: RegressorHeader {
                input_resolution: self.bbox_resolution,
                ..RegressorHeader::default()
            },
        }
    }

    pub fn recovery(&self) -> RecoveryConfig {
        RecoveryConfig {
            margin: self.margin,
            body_threshold: self.body_threshold,
            thresholds: TissueThresholds {
                window: self.window,
                ..self.thresholds
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

/// Parse `lo:hi`; the order is checked by [`RunConfig::validate`].
pub fn parse_range(key: &str, v: &str) -> Result<(f64, f64)> {
    let (a, b) = v
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("{key} expects lo:hi, got {v:?}")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn check_ordered(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo <= hi) {
        return Err(Error::Config(format!("{name} range {lo}:{hi} has lo > hi")));
    }
    Ok(())
}
