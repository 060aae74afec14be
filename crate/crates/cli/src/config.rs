//! Run configuration: one JSON document covering the whole pipeline,
//! with dot-path `--set key=value` overrides for scripted sweeps.

use gridmend_core::attack::AttackMode;
use gridmend_core::dataset::BoundaryMode;
use gridmend_core::estimation::NoiseModel;
use gridmend_core::neural::{CellActivation, LayerSizes, OptimizerKind, TrainConfig};
use gridmend_core::pipeline::IdentificationThresholds;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Overrides the configured output directory when set.
pub const OUT_DIR_ENV: &str = "GRIDMEND_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileConfig {
    /// Synthetic hourly shape.
    Synthetic {
        #[serde(default = "default_hours")]
        hours: usize,
    },
    /// Hourly CSV with columns `timestamp, demand_mw`.
    Csv { path: PathBuf },
}

fn default_hours() -> usize {
    8760
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig::Synthetic { hours: 8760 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSection {
    pub w: usize,
    pub stride: usize,
    pub awgn_sigma: f64,
    pub audit_fraction: f64,
    pub bdd_alpha: f64,
    pub max_attempts: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            w: 5,
            stride: 1,
            awgn_sigma: 0.002,
            audit_fraction: 0.01,
            bdd_alpha: 0.05,
            max_attempts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSection {
    pub mode: AttackMode,
    pub magnitude: f64,
    /// Floor on the absolute per-coordinate perturbation of dataset
    /// attacks; keeps attacked coordinates identifiable above the
    /// correction thresholds.
    pub min_magnitude: f64,
    /// Targets (full-state indices) for targeted mode.
    pub targets: Vec<usize>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            mode: AttackMode::Random,
            magnitude: 0.05,
            min_magnitude: 0.02,
            targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub sizes: LayerSizes,
    pub activation: CellActivation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            sizes: LayerSizes::DESK,
            activation: CellActivation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramSection {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistogramSection {
    fn default() -> Self {
        Self {
            bins: 20,
            lo: 0.0,
            hi: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Master seed; every random stream derives from it. Mandatory.
    pub seed: u64,
    /// Case file; the bundled IEEE 30-bus case when absent.
    #[serde(default)]
    pub case_path: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub profile: ProfileConfig,
    /// Per-bus load diversity jitter around the hourly multiplier.
    #[serde(default = "default_jitter")]
    pub load_jitter: f64,
    #[serde(default)]
    pub window: WindowSection,
    /// Number of windows to keep (0 = all available).
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default = "default_fractions")]
    pub fractions: (f64, f64, f64),
    #[serde(default = "default_boundary_mode")]
    pub boundary_mode: BoundaryMode,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub thresholds: IdentificationThresholds,
    #[serde(default)]
    pub histogram: HistogramSection,
    #[serde(default = "default_pf_tol")]
    pub pf_tol: f64,
    #[serde(default = "default_pf_max_iter")]
    pub pf_max_iter: usize,
    /// Write the per-element prediction dump during evaluation.
    #[serde(default = "default_true")]
    pub dump_predictions: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_jitter() -> f64 {
    0.02
}
fn default_sample_count() -> usize {
    5000
}
fn default_fractions() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}
fn default_boundary_mode() -> BoundaryMode {
    BoundaryMode::Contiguous
}
fn default_pf_tol() -> f64 {
    1e-8
}
fn default_pf_max_iter() -> usize {
    20
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    /// Loads a config file and applies `key=value` overrides (dot paths
    /// into the JSON document, values parsed as JSON with a string
    /// fallback).
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError(format!("invalid JSON: {e}")))?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(path) = &self.case_path {
            if !path.exists() {
                return Err(ConfigError(format!(
                    "case file {} does not exist",
                    path.display()
                )));
            }
        }
        if let ProfileConfig::Csv { path } = &self.profile {
            if !path.exists() {
                return Err(ConfigError(format!(
                    "load CSV {} does not exist",
                    path.display()
                )));
            }
        }
        if self.window.w < 2 {
            return Err(ConfigError("window.w must be >= 2".into()));
        }
        if self.train.epochs == 0 {
            return Err(ConfigError("train.epochs must be >= 1".into()));
        }
        let (a, b, c) = self.fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0 && (a + b + c - 1.0).abs() < 1e-9) {
            return Err(ConfigError("fractions must be positive and sum to 1".into()));
        }
        if self.histogram.bins == 0 || !(self.histogram.hi > self.histogram.lo) {
            return Err(ConfigError("histogram range is empty".into()));
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn effective_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Seed for a named random stream, derived from the master seed.
    pub fn stream_seed(&self, stream: SeedStream) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream as u64)
    }

    /// Training config with its seed tied to the master seed unless the
    /// user pinned one explicitly.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.train.clone();
        if cfg.seed == 0 {
            cfg.seed = self.stream_seed(SeedStream::Training);
        }
        cfg
    }

    pub fn optimizer(&self) -> OptimizerKind {
        self.train.optimizer
    }
}

/// Named random streams derived from the master seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    Profile = 1,
    Scenarios = 2,
    Windows = 3,
    Training = 4,
    Demo = 5,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<(), ConfigError> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{item}` is not key=value")))?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (idx, part) in parts.iter().enumerate() {
        if !node.is_object() {
            return Err(ConfigError(format!("`{path}` does not address an object")));
        }
        let map = node.as_object_mut().unwrap();
        if idx == parts.len() - 1 {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    Ok(())
}
