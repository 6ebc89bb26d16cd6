//! Single TOML configuration file for the whole pipeline.
//!
//! ```toml
//! [kalman]
//! process_noise = 0.05      # q, mm²/frame
//! measurement_noise = 0.5   # r, mm²
//! init_pos_var = 1.0
//! init_vel_var = 1.0
//!
//! [match]
//! weights = [3, 1, 3, 2, 2, 1, 3]
//! gate.max_jump_px = 50
//! gate.max_appearance = 0.35
//!
//! [slic]
//! compactness = 10
//! max_iters = 10
//! color_space = "rgb"
//! # init_count = 10000     # default: finest per-marker count
//! count = { toe = 10000, ankle = 10000, knee = 7000, hip = 3000, asis = 3000 }
//!
//! [tracker]
//! markers = ["toe", "ankle", "knee", "hip", "asis"]
//! roi = 100
//! init_padding = 100
//! loss_threshold = 25
//! mode = "3d"
//! refine = true             # merge same-colored neighbors of the match
//! refine_tolerance = 0.1
//!
//! [synth]
//! tol_px = 10
//! # seed = 7                # overrides the scenario seed
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::kalman::KalmanConfig;
use crate::matcher::{Gate, SuperpixelCounts, Weights};
use crate::slic::{ColorSpace, SlicParams};
use crate::tracker::{TrackerConfig, TrackingMode, DEFAULT_MARKERS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct MatchSection {
    pub weights: Weights<f64>,
    pub gate: Gate<f64>,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicSection {
    pub compactness: f64,
    pub max_iters: usize,
    pub color_space: ColorSpace,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_count: Option<usize>,
    pub count: SuperpixelCounts,
}

impl Default for SlicSection {
    fn default() -> Self {
        Self {
            compactness: SlicParams::DEFAULT_COMPACTNESS,
            max_iters: SlicParams::DEFAULT_ITERS,
            color_space: ColorSpace::Rgb,
            init_count: None,
            count: SuperpixelCounts::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSection {
    pub markers: Vec<String>,
    pub roi: usize,
    pub init_padding: f64,
    pub loss_threshold: usize,
    pub mode: TrackingMode,
    pub refine: bool,
    pub refine_tolerance: f64,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let d = TrackerConfig::default();
        Self {
            markers: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
            roi: d.roi,
            init_padding: d.init_padding,
            loss_threshold: d.loss_threshold,
            mode: d.mode,
            refine: d.refine,
            refine_tolerance: d.refine_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub tol_px: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { tol_px: 10.0, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub kalman: KalmanConfig<f64>,
    #[serde(rename = "match")]
    pub matching: MatchSection,
    pub slic: SlicSection,
    pub tracker: TrackerSection,
    pub synth: SynthSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&io::read_text(path)?).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Per-marker counts from the file layered over the defaults.
    fn merged_counts(&self) -> SuperpixelCounts {
        let mut counts = SuperpixelCounts::default();
        counts.0.extend(self.slic.count.0.iter().map(|(k, v)| (k.clone(), *v)));
        counts
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            markers: self.tracker.markers.clone(),
            roi: self.tracker.roi,
            init_padding: self.tracker.init_padding,
            loss_threshold: self.tracker.loss_threshold,
            mode: self.tracker.mode,
            compactness: self.slic.compactness,
            max_iters: self.slic.max_iters,
            color_space: self.slic.color_space,
            counts: self.merged_counts(),
            init_count: self.slic.init_count,
            weights: self.matching.weights,
            gate: self.matching.gate,
            kalman: self.kalman,
            refine: self.tracker.refine,
            refine_tolerance: self.tracker.refine_tolerance,
        }
    }
}
