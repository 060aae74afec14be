//! Hourly load profiles: CSV ingestion and a synthetic generator.

use super::PowerFlowError;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hourly system-load multipliers, normalized to mean 1.0.
#[derive(Debug, Clone)]
pub struct LoadProfile {
    pub multipliers: Vec<f64>,
}

impl LoadProfile {
    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    /// Reads an hourly load CSV with columns `timestamp, demand_mw` and
    /// normalizes demand against the column mean.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, PowerFlowError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut demand = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|_| PowerFlowError::InvalidScenario)?;
            let mw: f64 = record
                .get(1)
                .and_then(|f| f.parse().ok())
                .ok_or(PowerFlowError::InvalidScenario)?;
            if !mw.is_finite() || mw < 0.0 {
                return Err(PowerFlowError::InvalidScenario);
            }
            demand.push(mw);
        }
        if demand.is_empty() {
            return Err(PowerFlowError::InvalidScenario);
        }
        let mean = demand.iter().sum::<f64>() / demand.len() as f64;
        if mean <= 0.0 {
            return Err(PowerFlowError::InvalidScenario);
        }
        Ok(Self {
            multipliers: demand.into_iter().map(|d| d / mean).collect(),
        })
    }
}

/// Shape parameters of the synthetic hourly profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticProfileConfig {
    pub hours: usize,
    /// Peak-to-mean swing of the daily cycle.
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    pub seasonal_amplitude: f64,
    /// Standard deviation of the per-hour Gaussian wobble.
    pub noise_sigma: f64,
}

impl Default for SyntheticProfileConfig {
    fn default() -> Self {
        Self {
            hours: 8760,
            daily_amplitude: 0.18,
            weekly_amplitude: 0.04,
            seasonal_amplitude: 0.08,
            noise_sigma: 0.02,
        }
    }
}

/// Generates a plausible hourly load shape: daily and weekly cycles on a
/// seasonal drift plus small noise, clamped to sane multipliers.
pub fn synthetic_profile<R: Rng>(cfg: &SyntheticProfileConfig, rng: &mut R) -> LoadProfile {
    use std::f64::consts::TAU;
    let normal = rand_distr::Normal::new(0.0, cfg.noise_sigma.max(1e-12)).unwrap();
    let multipliers = (0..cfg.hours)
        .map(|h| {
            let t = h as f64;
            // Evening-peaked daily shape.
            let daily = cfg.daily_amplitude * (TAU * (t - 15.0) / 24.0).cos();
            let weekly = cfg.weekly_amplitude * (TAU * t / 168.0).cos();
            let seasonal = cfg.seasonal_amplitude * (TAU * t / 8760.0).cos();
            let noise = if cfg.noise_sigma > 0.0 {
                rng.sample(normal)
            } else {
                0.0
            };
            (1.0 + daily + weekly + seasonal + noise).clamp(0.3, 2.5)
        })
        .collect();
    LoadProfile { multipliers }
}
