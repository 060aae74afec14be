//! Stealthy false-data injection against the WLS estimator.
//!
//! With full network knowledge the attacker shifts the estimate by a
//! chosen state perturbation `c` while leaving the detection residual
//! untouched: in the DC model `a = Hc`, in the AC model
//! `a = h(x_est + c) - h(x_est)`. Either way the residual of `z + a`
//! evaluated at the shifted estimate equals the residual of `z` at the
//! original estimate, so the chi-square statistic cannot tell the two
//! apart.

use crate::estimation::{EstimationError, MeasurementVector};
use crate::grid::{GridError, NetworkModel, StateVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("attack magnitude must be positive")]
    InvalidMagnitude,
    #[error("targeted attack needs a non-empty target set")]
    EmptyTargets,
    #[error("perturbed state is physically invalid (v <= 0)")]
    InfeasiblePerturbation,
    #[error("no feasible stealthy attack found after {attempts} attempts")]
    Exhausted { attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    /// Arbitrary errors on a random subset of states.
    Random,
    /// Fixed errors on chosen states.
    Targeted,
}

/// A state-space attack: which coordinates move and by how much.
///
/// `c` is laid out like the full state `[theta_0..theta_{n-1},
/// v_0..v_{n-1}]`; the slack-angle coordinate is always zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub mode: AttackMode,
    pub target_states: Vec<usize>,
    pub c: Vec<f64>,
    pub magnitude: f64,
}

impl AttackSpec {
    pub fn c_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.c)
    }

    /// Indices where `c` is nonzero.
    pub fn support(&self) -> Vec<usize> {
        self.c
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Draws attack specifications with the slack angle pinned to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSampler {
    pub mode: AttackMode,
    /// Full state dimension 2 * n_bus.
    pub n_states: usize,
    /// Index of the pinned slack angle inside the state layout.
    pub slack_theta_index: usize,
    /// Largest absolute per-coordinate perturbation (rad / p.u.).
    pub magnitude: f64,
    /// Smallest absolute perturbation of a touched coordinate; zero means
    /// plain uniform draws over [-magnitude, magnitude].
    pub min_magnitude: f64,
    /// Targets for [`AttackMode::Targeted`].
    pub targets: Vec<usize>,
}

impl AttackSampler {
    pub fn random(n_states: usize, slack_theta_index: usize, magnitude: f64) -> Self {
        Self {
            mode: AttackMode::Random,
            n_states,
            slack_theta_index,
            magnitude,
            min_magnitude: 0.0,
            targets: Vec::new(),
        }
    }

    pub fn targeted(
        n_states: usize,
        slack_theta_index: usize,
        magnitude: f64,
        targets: Vec<usize>,
    ) -> Self {
        Self {
            mode: AttackMode::Targeted,
            n_states,
            slack_theta_index,
            magnitude,
            min_magnitude: 0.0,
            targets,
        }
    }

    /// Draws one attack specification.
    ///
    /// Random mode perturbs a uniform-size subset (1 ..= n/4) of non-slack
    /// coordinates by uniform amounts in [-magnitude, magnitude] (their
    /// absolute value floored at `min_magnitude`); targeted mode applies
    /// exactly `magnitude` to each requested target.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<AttackSpec, AttackError> {
        if !(self.magnitude > 0.0) {
            return Err(AttackError::InvalidMagnitude);
        }
        let mut c = vec![0.0; self.n_states];
        let targets = match self.mode {
            AttackMode::Targeted => {
                if self.targets.is_empty() {
                    return Err(AttackError::EmptyTargets);
                }
                for &t in &self.targets {
                    if t >= self.n_states {
                        return Err(AttackError::Dimension {
                            expected: self.n_states,
                            got: t,
                        });
                    }
                    if t != self.slack_theta_index {
                        c[t] = self.magnitude;
                    }
                }
                self.targets.clone()
            }
            AttackMode::Random => {
                let max_subset = (self.n_states / 4).max(1);
                let subset_size = rng.random_range(1..=max_subset);
                let mut picked = Vec::with_capacity(subset_size);
                while picked.len() < subset_size {
                    let idx = rng.random_range(0..self.n_states);
                    if idx == self.slack_theta_index || picked.contains(&idx) {
                        continue;
                    }
                    picked.push(idx);
                }
                picked.sort_unstable();
                for &idx in &picked {
                    let mut value: f64 = rng.random_range(-self.magnitude..=self.magnitude);
                    if self.min_magnitude > 0.0 {
                        let sign = if value >= 0.0 { 1.0 } else { -1.0 };
                        let span = (self.magnitude - self.min_magnitude).max(0.0);
                        value = sign
                            * (self.min_magnitude
                                + value.abs() / self.magnitude.max(1e-300) * span);
                    }
                    c[idx] = value;
                }
                picked
            }
        };
        Ok(AttackSpec {
            mode: self.mode,
            target_states: targets,
            c,
            magnitude: self.magnitude,
        })
    }
}

/// One-shot sampler matching the module-level contract.
pub fn sample_attack<R: Rng>(
    rng: &mut R,
    mode: AttackMode,
    n_states: usize,
    slack_theta_index: usize,
    magnitude: f64,
    targets: &[usize],
) -> Result<AttackSpec, AttackError> {
    AttackSampler {
        mode,
        n_states,
        slack_theta_index,
        magnitude,
        min_magnitude: 0.0,
        targets: targets.to_vec(),
    }
    .sample(rng)
}

/// DC stealth attack vector `a = H c` for an estimation-view `c`.
pub fn craft_dc(h: &DMatrix<f64>, c: &DVector<f64>) -> Result<DVector<f64>, AttackError> {
    if h.ncols() != c.len() {
        return Err(AttackError::Dimension {
            expected: h.ncols(),
            got: c.len(),
        });
    }
    Ok(h * c)
}

/// AC stealth attack vector `a = h(x_est + c) - h(x_est)`.
///
/// `c` is a full-state perturbation (slack angle entry ignored and treated
/// as zero). Errors if the perturbed state is physically invalid.
pub fn craft_ac(
    model: &NetworkModel,
    x_est: &StateVector,
    c: &DVector<f64>,
) -> Result<DVector<f64>, AttackError> {
    let shifted = shifted_state(model, x_est, c)?;
    let z_base = model.measure(x_est)?;
    let z_shift = model.measure(&shifted)?;
    Ok(z_shift - z_base)
}

/// x_est + c with the slack angle held at x_est's value.
pub fn shifted_state(
    model: &NetworkModel,
    x_est: &StateVector,
    c: &DVector<f64>,
) -> Result<StateVector, AttackError> {
    let n = model.n_bus();
    if c.len() != 2 * n {
        return Err(AttackError::Dimension {
            expected: 2 * n,
            got: c.len(),
        });
    }
    let slack = model.slack_index();
    let mut full = x_est.to_full();
    for i in 0..2 * n {
        if i == slack {
            continue;
        }
        full[i] += c[i];
    }
    for i in n..2 * n {
        if full[i] <= 0.0 {
            return Err(AttackError::InfeasiblePerturbation);
        }
    }
    StateVector::from_full(&full).map_err(|_| AttackError::InfeasiblePerturbation)
}

/// A crafted attack ready for audit or injection.
#[derive(Debug, Clone, Serialize)]
pub struct AttackRecord {
    pub spec: AttackSpec,
    /// Measurement-space attack vector, p.u.
    pub a: Vec<f64>,
    /// BDD threshold minus statistic after the attack; nonnegative for
    /// accepted attacks.
    pub stealth_margin: f64,
}

impl AttackRecord {
    pub fn to_json_line(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }
}

/// Applies an attack vector to measurements.
pub fn attacked_measurements(
    meas: &MeasurementVector,
    a: &DVector<f64>,
) -> Result<MeasurementVector, AttackError> {
    if meas.len() != a.len() {
        return Err(AttackError::Dimension {
            expected: meas.len(),
            got: a.len(),
        });
    }
    Ok(MeasurementVector::new(&meas.z + a, meas.weights.clone())?)
}
