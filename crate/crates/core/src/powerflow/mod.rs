//! Newton–Raphson AC power flow: turns load scenarios into ground-truth
//! state vectors.

mod profile;

pub use profile::{synthetic_profile, LoadProfile, SyntheticProfileConfig};

use crate::grid::{BusKind, GridError, NetworkModel, StateVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("scenario multipliers must be finite and within [0, 3]")]
    InvalidScenario,
    #[error("power flow did not converge after {iterations} iterations (max mismatch {max_mismatch:.3e})")]
    NonConvergence { iterations: usize, max_mismatch: f64 },
    #[error("singular power-flow Jacobian: scenario infeasible or network unobservable")]
    SingularJacobian,
}

/// Per-bus load multipliers for one hour.
#[derive(Debug, Clone)]
pub struct LoadScenario {
    /// Hour index in the source profile.
    pub timestamp: usize,
    pub scale_p: Vec<f64>,
    pub scale_q: Vec<f64>,
}

impl LoadScenario {
    pub fn new(timestamp: usize, scale_p: Vec<f64>, scale_q: Vec<f64>) -> Result<Self, PowerFlowError> {
        let ok = |s: &[f64]| s.iter().all(|m| m.is_finite() && (0.0..=3.0).contains(m));
        if scale_p.len() != scale_q.len() || !ok(&scale_p) || !ok(&scale_q) {
            return Err(PowerFlowError::InvalidScenario);
        }
        Ok(Self {
            timestamp,
            scale_p,
            scale_q,
        })
    }

    /// Uniform multiplier on every bus, constant power factor.
    pub fn uniform(timestamp: usize, n_bus: usize, scale: f64) -> Result<Self, PowerFlowError> {
        Self::new(timestamp, vec![scale; n_bus], vec![scale; n_bus])
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub state: StateVector,
    pub iterations: usize,
    /// Largest remaining active/reactive mismatch, p.u.
    pub max_mismatch: f64,
}

/// Scheduled net injections for a scenario: P at every bus, Q at every bus.
fn scheduled_injections(model: &NetworkModel, scenario: &LoadScenario) -> (Vec<f64>, Vec<f64>) {
    let p = model
        .buses
        .iter()
        .map(|b| b.gen_p - b.base_load_p * scenario.scale_p[b.id])
        .collect();
    let q = model
        .buses
        .iter()
        .map(|b| -b.base_load_q * scenario.scale_q[b.id])
        .collect();
    (p, q)
}

/// Solves the AC power flow with full Newton–Raphson from the given start.
///
/// On success all P mismatches at PV/PQ buses and Q mismatches at PQ buses
/// are below `tol`; the slack angle is 0 and PV magnitudes sit at their
/// setpoints.
pub fn solve_from(
    model: &NetworkModel,
    scenario: &LoadScenario,
    start: &StateVector,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution, PowerFlowError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let n = model.n_bus();
    if scenario.scale_p.len() != n {
        return Err(PowerFlowError::InvalidScenario);
    }
    let slack = model.slack_index();
    let theta_vars: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let v_vars: Vec<usize> = (0..n)
        .filter(|&i| model.buses[i].kind == BusKind::Pq)
        .collect();
    let (p_spec, q_spec) = scheduled_injections(model, scenario);

    let mut x = start.clone();
    x.theta[slack] = 0.0;
    for bus in &model.buses {
        if bus.kind != BusKind::Pq {
            x.v[bus.id] = bus.voltage_setpoint;
        }
    }

    let mismatch = |x: &StateVector| -> Result<DVector<f64>, PowerFlowError> {
        let inj = model.injections(x)?;
        let mut f = DVector::zeros(theta_vars.len() + v_vars.len());
        for (row, &i) in theta_vars.iter().enumerate() {
            f[row] = p_spec[i] - inj[i].re;
        }
        for (row, &i) in v_vars.iter().enumerate() {
            f[theta_vars.len() + row] = q_spec[i] - inj[i].im;
        }
        Ok(f)
    };

    let mut f = mismatch(&x)?;
    let mut max_mismatch = f.amax();
    let mut iterations = 0;
    while max_mismatch > tol {
        if iterations >= max_iter {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                max_mismatch,
            });
        }
        let jac_full = model.injection_jacobian(&x)?;
        let mut jac = DMatrix::zeros(f.len(), f.len());
        for (row, &i) in theta_vars.iter().enumerate() {
            fill_jacobian_row(&mut jac, row, &jac_full, i, n, &theta_vars, &v_vars);
        }
        for (row, &i) in v_vars.iter().enumerate() {
            fill_jacobian_row(
                &mut jac,
                theta_vars.len() + row,
                &jac_full,
                n + i,
                n,
                &theta_vars,
                &v_vars,
            );
        }
        let step = jac
            .lu()
            .solve(&f)
            .ok_or(PowerFlowError::SingularJacobian)?;
        for (k, &i) in theta_vars.iter().enumerate() {
            x.theta[i] += step[k];
        }
        for (k, &i) in v_vars.iter().enumerate() {
            x.v[i] += step[theta_vars.len() + k];
            if x.v[i] <= 0.0 {
                return Err(PowerFlowError::SingularJacobian);
            }
        }
        f = mismatch(&x)?;
        max_mismatch = f.amax();
        iterations += 1;
    }
    Ok(PowerFlowSolution {
        state: x,
        iterations,
        max_mismatch,
    })
}

fn fill_jacobian_row(
    jac: &mut DMatrix<f64>,
    row: usize,
    jac_full: &DMatrix<f64>,
    src_row: usize,
    n: usize,
    theta_vars: &[usize],
    v_vars: &[usize],
) {
    for (col, &j) in theta_vars.iter().enumerate() {
        jac[(row, col)] = jac_full[(src_row, j)];
    }
    for (col, &j) in v_vars.iter().enumerate() {
        jac[(row, theta_vars.len() + col)] = jac_full[(src_row, n + j)];
    }
}

/// Flat-start power flow.
pub fn solve(
    model: &NetworkModel,
    scenario: &LoadScenario,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution, PowerFlowError> {
    solve_from(model, scenario, &StateVector::flat(model.n_bus()), tol, max_iter)
}

/// A solved hourly state series with per-hour failure diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    /// Source hour of each state, aligned with `states`.
    pub hours: Vec<usize>,
    /// Hours whose scenario failed to solve, with the failure text.
    pub failures: Vec<(usize, String)>,
}

/// Solves every scenario in order, warm-starting each hour from the last
/// successful solution. Infeasible hours are recorded and skipped; the run
/// never aborts on a per-hour failure.
pub fn trajectory(
    model: &NetworkModel,
    scenarios: &[LoadScenario],
    tol: f64,
    max_iter: usize,
) -> Result<Trajectory, PowerFlowError> {
    let mut out = Trajectory {
        states: Vec::with_capacity(scenarios.len()),
        hours: Vec::with_capacity(scenarios.len()),
        failures: Vec::new(),
    };
    let mut warm = StateVector::flat(model.n_bus());
    for scenario in scenarios {
        match solve_from(model, scenario, &warm, tol, max_iter) {
            Ok(sol) => {
                warm = sol.state.clone();
                out.states.push(sol.state);
                out.hours.push(scenario.timestamp);
            }
            Err(err) => out.failures.push((scenario.timestamp, err.to_string())),
        }
    }
    Ok(out)
}

/// Expands an hourly multiplier profile into per-bus scenarios with
/// uniform load-diversity jitter of `jitter` around each hour's value.
pub fn scenarios_from_profile<R: Rng>(
    profile: &LoadProfile,
    n_bus: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<Vec<LoadScenario>, PowerFlowError> {
    profile
        .multipliers
        .iter()
        .enumerate()
        .map(|(hour, &m)| {
            let scale: Vec<f64> = (0..n_bus)
                .map(|_| {
                    let j = if jitter > 0.0 {
                        rng.random_range(-jitter..=jitter)
                    } else {
                        0.0
                    };
                    (m * (1.0 + j)).clamp(0.0, 3.0)
                })
                .collect();
            LoadScenario::new(hour, scale.clone(), scale)
        })
        .collect()
}
