//! Training corpora: sliding windows of states where the first w-1 rows
//! are normal (AWGN-perturbed on the input side) and the last row is
//! attacked, plus temporal splitting and per-state z-score normalization.

mod container;

pub use container::{load_dataset, load_manifest, save_dataset, save_manifest, DatasetManifest};

use crate::attack::{AttackError, AttackSampler};
use crate::estimation::{
    ac_estimate, chi_square_verdict, objective, EstimationError, NoiseModel,
};
use crate::grid::{NetworkModel, StateVector};
use crate::{attack, powerflow::Trajectory};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("window size must be >= 2, got {0}")]
    WindowTooSmall(usize),
    #[error("need at least {needed} states for one window, got {got}")]
    NotEnoughStates { needed: usize, got: usize },
    #[error("fractions must be positive and sum to 1")]
    BadFractions,
    #[error("too few samples ({got}) for the requested split")]
    TooFewSamples { got: usize },
    #[error("normalizer fitted on empty training set")]
    EmptyTrain,
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("dataset file corrupt: {0}")]
    Corrupt(String),
    #[error("dataset file version {got} unsupported (expected {expected})")]
    Version { expected: u32, got: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One training window.
///
/// `inputs` and `target` are w x n_states row-major; rows 0..w-2 of the
/// inputs are AWGN-perturbed copies of the clean states, row w-1 is the
/// attacked state. The target holds the clean states throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub inputs: Vec<f64>,
    pub target: Vec<f64>,
    /// Which state coordinates the attack touched.
    pub attack_mask: Vec<bool>,
    /// Source hour of the first row.
    pub meta: usize,
}

impl WindowSample {
    pub fn n_states(&self) -> usize {
        self.attack_mask.len()
    }

    pub fn w(&self) -> usize {
        self.inputs.len() / self.n_states()
    }

    pub fn input_row(&self, row: usize) -> &[f64] {
        let n = self.n_states();
        &self.inputs[row * n..(row + 1) * n]
    }

    pub fn target_row(&self, row: usize) -> &[f64] {
        let n = self.n_states();
        &self.target[row * n..(row + 1) * n]
    }
}

/// Window construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConfig {
    pub w: usize,
    pub stride: usize,
    /// AWGN applied to the first w-1 input rows, state units.
    pub awgn_sigma: f64,
    /// Fraction of windows whose attack is audited end-to-end against the
    /// estimator and bad-data detector.
    pub audit_fraction: f64,
    pub bdd_alpha: f64,
    /// Retries when a sampled attack is infeasible or fails its audit.
    pub max_attempts: usize,
}

impl Default for WindowConfig {
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

/// Builds windows over a state trajectory: per admissible start index, w-1
/// AWGN-noised rows plus one attacked row, targets noise-free.
///
/// The attacked row is the clean state shifted by a sampled attack `c`; a
/// random `audit_fraction` of windows is verified stealthy end to end
/// (measurements attacked via the estimated state, re-estimated, and the
/// bad-data verdict compared with the clean one). Windows whose attack
/// repeatedly fails are skipped and reported in the second return value.
pub fn build_windows<R: Rng>(
    model: &NetworkModel,
    states: &[StateVector],
    hours: &[usize],
    sampler: &AttackSampler,
    noise: &NoiseModel,
    cfg: &WindowConfig,
    rng: &mut R,
) -> Result<(Vec<WindowSample>, Vec<usize>), DatasetError> {
    if cfg.w < 2 {
        return Err(DatasetError::WindowTooSmall(cfg.w));
    }
    if states.len() < cfg.w {
        return Err(DatasetError::NotEnoughStates {
            needed: cfg.w,
            got: states.len(),
        });
    }
    assert_eq!(states.len(), hours.len(), "states and hours must align");
    let stride = cfg.stride.max(1);
    let awgn = Normal::new(0.0, cfg.awgn_sigma.max(1e-300)).unwrap();

    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut start = 0;
    while start + cfg.w <= states.len() {
        let window = &states[start..start + cfg.w];
        match build_one_window(model, window, hours[start], sampler, noise, cfg, &awgn, rng) {
            Ok(sample) => samples.push(sample),
            Err(_) => skipped.push(hours[start]),
        }
        start += stride;
    }
    Ok((samples, skipped))
}

#[allow(clippy::too_many_arguments)]
fn build_one_window<R: Rng>(
    model: &NetworkModel,
    window: &[StateVector],
    meta: usize,
    sampler: &AttackSampler,
    noise: &NoiseModel,
    cfg: &WindowConfig,
    awgn: &Normal<f64>,
    rng: &mut R,
) -> Result<WindowSample, DatasetError> {
    let n = model.n_states();
    let w = window.len();
    let mut target = Vec::with_capacity(w * n);
    for x in window {
        target.extend_from_slice(x.to_full().as_slice());
    }

    // The pinned slack angle carries no correction noise; AWGN skips it.
    let slack = model.slack_index();
    let mut inputs = target.clone();
    if cfg.awgn_sigma > 0.0 {
        for (idx, value) in inputs.iter_mut().take((w - 1) * n).enumerate() {
            if idx % n != slack {
                *value += rng.sample(awgn);
            }
        }
    }

    let last = &window[w - 1];
    let audit = cfg.audit_fraction > 0.0 && rng.random_bool(cfg.audit_fraction.clamp(0.0, 1.0));
    let mut attempts = 0;
    let spec = loop {
        attempts += 1;
        if attempts > cfg.max_attempts {
            return Err(DatasetError::Attack(AttackError::Exhausted {
                attempts: attempts - 1,
            }));
        }
        let spec = sampler.sample(rng)?;
        let c = spec.c_vector();
        // Feasibility of the shifted state is always required; the audit
        // additionally replays the attack through the estimator.
        if attack::shifted_state(model, last, &c).is_err() {
            continue;
        }
        if audit && !audit_attack(model, last, &c, noise, cfg, rng)? {
            continue;
        }
        break spec;
    };

    let mut attack_mask = vec![false; n];
    for (i, &ci) in spec.c.iter().enumerate() {
        if ci != 0.0 {
            attack_mask[i] = true;
            inputs[(w - 1) * n + i] += ci;
        }
    }
    Ok(WindowSample {
        inputs,
        target,
        attack_mask,
        meta,
    })
}

/// Replays the attack against the estimator: measurements of the clean
/// state are attacked via the *estimated* state, re-estimated, and the
/// chi-square statistic and verdict compared with the clean baseline.
fn audit_attack<R: Rng>(
    model: &NetworkModel,
    x_true: &StateVector,
    c: &nalgebra::DVector<f64>,
    noise: &NoiseModel,
    cfg: &WindowConfig,
    rng: &mut R,
) -> Result<bool, DatasetError> {
    let meas = noise.simulate(model, x_true, rng)?;
    let flat = StateVector::flat(model.n_bus());
    let est = ac_estimate(model, &meas, &flat, 1e-8, 30)?;
    let (m, n_free) = (meas.len(), model.n_free_states());
    let clean = chi_square_verdict(est.objective, m, n_free, cfg.bdd_alpha)?;

    let a = attack::craft_ac(model, &est.x_est, c)?;
    let attacked = attack::attacked_measurements(&meas, &a)?;
    let shifted = attack::shifted_state(model, &est.x_est, c)?;
    let f_shifted = objective(model, &attacked, &shifted)?;
    if (f_shifted - est.objective).abs() > 1e-6 {
        return Ok(false);
    }
    let est_attacked = ac_estimate(model, &attacked, &flat, 1e-8, 30)?;
    let hit = chi_square_verdict(est_attacked.objective, m, n_free, cfg.bdd_alpha)?;
    Ok(clean.passed == hit.passed)
}

/// How windows interact with split boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Cut the ordered sample list at exact fractional counts.
    Contiguous,
    /// As `Contiguous`, then drop val/test windows whose source hours
    /// overlap the preceding block (w - 1 windows per boundary at
    /// stride 1).
    ExcludeStraddling,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub fractions: (f64, f64, f64),
}

impl DatasetSplit {
    pub fn n_states(&self) -> usize {
        self.train
            .first()
            .or(self.val.first())
            .or(self.test.first())
            .map(WindowSample::n_states)
            .unwrap_or(0)
    }

    pub fn w(&self) -> usize {
        self.train
            .first()
            .or(self.val.first())
            .or(self.test.first())
            .map(WindowSample::w)
            .unwrap_or(0)
    }
}

/// Splits time-ordered samples into train/val/test blocks.
///
/// Blocks are contiguous in time (train before val before test); samples
/// are never shuffled across the boundaries.
pub fn split(
    samples: Vec<WindowSample>,
    fractions: (f64, f64, f64),
    boundary_mode: BoundaryMode,
) -> Result<DatasetSplit, DatasetError> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions);
    }
    let total = samples.len();
    let n_train = (total as f64 * ft).round() as usize;
    let n_val = (total as f64 * fv).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= total {
        return Err(DatasetError::TooFewSamples { got: total });
    }
    let mut samples = samples;
    let test: Vec<_> = samples.split_off(n_train + n_val);
    let val: Vec<_> = samples.split_off(n_train);
    let train = samples;

    let (val, test) = match boundary_mode {
        BoundaryMode::Contiguous => (val, test),
        BoundaryMode::ExcludeStraddling => {
            let w = train.first().map(WindowSample::w).unwrap_or(0);
            let train_end = train.last().map(|s| s.meta + w).unwrap_or(0);
            let val: Vec<_> = val.into_iter().filter(|s| s.meta >= train_end).collect();
            let val_end = val.last().map(|s| s.meta + w).unwrap_or(train_end);
            let test: Vec<_> = test.into_iter().filter(|s| s.meta >= val_end).collect();
            (val, test)
        }
    };
    if val.is_empty() || test.is_empty() {
        return Err(DatasetError::TooFewSamples { got: total });
    }
    Ok(DatasetSplit {
        train,
        val,
        test,
        fractions,
    })
}

/// Per-state z-score transform fitted on training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fits per-coordinate mean and standard deviation over every input
    /// row of the training samples. Zero-variance coordinates (the pinned
    /// slack angle) get std clamped to 1.
    pub fn fit(train: &[WindowSample]) -> Result<Self, DatasetError> {
        let first = train.first().ok_or(DatasetError::EmptyTrain)?;
        let n = first.n_states();
        let mut mean = vec![0.0; n];
        let mut count = 0usize;
        for sample in train {
            for row in 0..sample.w() {
                for (k, &v) in sample.input_row(row).iter().enumerate() {
                    mean[k] += v;
                }
                count += 1;
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; n];
        for sample in train {
            for row in 0..sample.w() {
                for (k, &v) in sample.input_row(row).iter().enumerate() {
                    let d = v - mean[k];
                    var[k] += d * d;
                }
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn n_states(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - self.mean[k]) / self.std[k];
        }
    }

    pub fn invert_row(&self, row: &mut [f64]) {
        for (k, v) in row.iter_mut().enumerate() {
            *v = *v * self.std[k] + self.mean[k];
        }
    }

    /// Normalizes a whole row-major (w x n) matrix buffer.
    pub fn apply_matrix(&self, data: &mut [f64]) {
        let n = self.n_states();
        for row in data.chunks_mut(n) {
            self.apply_row(row);
        }
    }

    pub fn invert_matrix(&self, data: &mut [f64]) {
        let n = self.n_states();
        for row in data.chunks_mut(n) {
            self.invert_row(row);
        }
    }
}

/// Convenience wrapper: windows straight from a power-flow trajectory.
pub fn windows_from_trajectory<R: Rng>(
    model: &NetworkModel,
    traj: &Trajectory,
    sampler: &AttackSampler,
    noise: &NoiseModel,
    cfg: &WindowConfig,
    rng: &mut R,
) -> Result<(Vec<WindowSample>, Vec<usize>), DatasetError> {
    build_windows(model, &traj.states, &traj.hours, sampler, noise, cfg, rng)
}
