//! Weighted-least-squares state estimation and residual-based bad-data
//! detection.
//!
//! The DC estimator solves the weighted normal equations in closed form;
//! the AC estimator minimizes F(x) = (z - h(x))' W (z - h(x)) by
//! Gauss-Newton iteration with a halving line search. Bad-data detection
//! is a chi-square test on the WLS objective with m - n degrees of
//! freedom.

use crate::grid::{GridError, MeasurementKind, NetworkModel, StateVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("measurement vector invalid: {0}")]
    InvalidMeasurement(String),
    #[error("gain matrix is singular: measurement plan does not observe the state")]
    Unobservable,
    #[error("estimator did not converge after {iterations} iterations (last step {last_step:.3e})")]
    NonConvergence { iterations: usize, last_step: f64 },
    #[error("invalid significance level {0}; need 0 < alpha < 1")]
    InvalidAlpha(f64),
    #[error("degrees of freedom must be positive (m = {m}, n = {n})")]
    InvalidDof { m: usize, n: usize },
}

/// Sensor readings with their per-channel weights (1/sigma^2).
#[derive(Debug, Clone)]
pub struct MeasurementVector {
    pub z: DVector<f64>,
    /// Diagonal of W; strictly positive.
    pub weights: DVector<f64>,
}

impl MeasurementVector {
    pub fn new(z: DVector<f64>, weights: DVector<f64>) -> Result<Self, EstimationError> {
        if z.len() != weights.len() {
            return Err(EstimationError::InvalidMeasurement(format!(
                "z has {} entries but weights has {}",
                z.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(EstimationError::InvalidMeasurement(
                "weights must be positive and finite".into(),
            ));
        }
        Ok(Self { z, weights })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.len() == 0
    }
}

/// Measurement noise model: standard deviations per channel class, p.u.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub sigma_power: f64,
    pub sigma_voltage: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_power: 0.01,
            sigma_voltage: 0.004,
        }
    }
}

impl NoiseModel {
    pub fn sigma_for(&self, kind: MeasurementKind) -> f64 {
        match kind {
            MeasurementKind::VMagnitude(_) => self.sigma_voltage,
            _ => self.sigma_power,
        }
    }

    /// Weight diagonal 1/sigma^2 in plan order.
    pub fn weights(&self, model: &NetworkModel) -> DVector<f64> {
        DVector::from_iterator(
            model.measurement_plan.len(),
            model
                .measurement_plan
                .iter()
                .map(|&k| self.sigma_for(k).powi(-2)),
        )
    }

    /// Noise-free measurements of `x` with this noise model's weights.
    pub fn exact(
        &self,
        model: &NetworkModel,
        x: &StateVector,
    ) -> Result<MeasurementVector, EstimationError> {
        MeasurementVector::new(model.measure(x)?, self.weights(model))
    }

    /// Measurements of `x` with additive zero-mean Gaussian channel noise.
    pub fn simulate<R: Rng>(
        &self,
        model: &NetworkModel,
        x: &StateVector,
        rng: &mut R,
    ) -> Result<MeasurementVector, EstimationError> {
        let mut z = model.measure(x)?;
        for (row, &kind) in model.measurement_plan.iter().enumerate() {
            let normal = rand_distr::Normal::new(0.0, self.sigma_for(kind)).unwrap();
            z[row] += rng.sample(normal);
        }
        MeasurementVector::new(z, self.weights(model))
    }
}

/// Closed-form linear WLS solution.
#[derive(Debug, Clone)]
pub struct LinearEstimate {
    pub x_est: DVector<f64>,
    pub residual: DVector<f64>,
    pub objective: f64,
}

/// Solves x = argmin (z - Hx)' W (z - Hx) via the weighted normal
/// equations with a symmetric positive-definite factorization. A gain
/// matrix that fails to factor surfaces as an observability error.
pub fn dc_estimate(
    h: &DMatrix<f64>,
    meas: &MeasurementVector,
) -> Result<LinearEstimate, EstimationError> {
    if h.nrows() != meas.len() {
        return Err(EstimationError::InvalidMeasurement(format!(
            "H has {} rows but z has {} entries",
            h.nrows(),
            meas.len()
        )));
    }
    let htw = weighted_transpose(h, &meas.weights);
    let gain = &htw * h;
    let rhs = &htw * &meas.z;
    let chol = factor_gain(gain)?;
    let x_est = chol.solve(&rhs);
    let residual = &meas.z - h * &x_est;
    let objective = weighted_sq_norm(&residual, &meas.weights);
    Ok(LinearEstimate {
        x_est,
        residual,
        objective,
    })
}

/// Cholesky factorization of the gain matrix with an explicit conditioning
/// guard; near-singular gains surface as observability errors instead of
/// being silently regularized.
fn factor_gain(gain: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, EstimationError> {
    let chol = gain.cholesky().ok_or(EstimationError::Unobservable)?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.amax();
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > max * 1e-7) {
        return Err(EstimationError::Unobservable);
    }
    Ok(chol)
}

/// H' W for diagonal W.
fn weighted_transpose(h: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mut htw = h.transpose();
    for (col, &w) in weights.iter().enumerate() {
        htw.column_mut(col).scale_mut(w);
    }
    htw
}

fn weighted_sq_norm(r: &DVector<f64>, weights: &DVector<f64>) -> f64 {
    r.iter().zip(weights.iter()).map(|(ri, wi)| wi * ri * ri).sum()
}

/// Result of the iterative AC estimator.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub x_est: StateVector,
    /// Final WLS objective F(x_est).
    pub objective: f64,
    /// z - h(x_est).
    pub residual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// WLS objective F(x) = (z - h(x))' W (z - h(x)).
pub fn objective(
    model: &NetworkModel,
    meas: &MeasurementVector,
    x: &StateVector,
) -> Result<f64, EstimationError> {
    check_plan(model, meas)?;
    let r = &meas.z - model.measure(x)?;
    Ok(weighted_sq_norm(&r, &meas.weights))
}

fn check_plan(model: &NetworkModel, meas: &MeasurementVector) -> Result<(), EstimationError> {
    if meas.len() != model.measurement_plan.len() {
        return Err(EstimationError::InvalidMeasurement(format!(
            "measurement vector has {} entries but the plan has {}",
            meas.len(),
            model.measurement_plan.len()
        )));
    }
    Ok(())
}

/// One trace record per Gauss-Newton iteration.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub iteration: usize,
    pub objective: f64,
    pub step_norm: f64,
}

/// Gauss-Newton WLS estimation of the AC state.
///
/// Converges when the infinity norm of the Newton step falls below `tol`.
/// The halving line search keeps the objective non-increasing across
/// iterations.
pub fn ac_estimate(
    model: &NetworkModel,
    meas: &MeasurementVector,
    x0: &StateVector,
    tol: f64,
    max_iter: usize,
) -> Result<EstimationResult, EstimationError> {
    ac_estimate_traced(model, meas, x0, tol, max_iter, &mut None)
}

/// As [`ac_estimate`], optionally recording the per-iteration trace.
pub fn ac_estimate_traced(
    model: &NetworkModel,
    meas: &MeasurementVector,
    x0: &StateVector,
    tol: f64,
    max_iter: usize,
    trace: &mut Option<Vec<IterationTrace>>,
) -> Result<EstimationResult, EstimationError> {
    check_plan(model, meas)?;
    let slack = model.slack_index();
    let mut x = x0.clone();
    x.theta[slack] = 0.0;
    let mut f_current = objective(model, meas, &x)?;
    let mut iterations = 0;
    let mut converged = false;

    while !converged && iterations < max_iter {
        let h = model.jacobian(&x)?;
        let r = &meas.z - model.measure(&x)?;
        let htw = weighted_transpose(&h, &meas.weights);
        let gain = &htw * &h;
        let rhs = &htw * &r;
        let step = factor_gain(gain)?.solve(&rhs);
        iterations += 1;

        // Halving line search on F; Gauss-Newton directions are descent
        // directions under a positive-definite gain, so this terminates.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            if let Some(cand) = apply_step(model, &x, &step, alpha) {
                let f_new = objective(model, meas, &cand)?;
                if f_new <= f_current {
                    accepted = Some((cand, f_new));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((x_new, f_new)) => {
                x = x_new;
                f_current = f_new;
                if let Some(tr) = trace.as_mut() {
                    tr.push(IterationTrace {
                        iteration: iterations,
                        objective: f_current,
                        step_norm: alpha * step.amax(),
                    });
                }
                if step.amax() <= tol {
                    converged = true;
                }
            }
            // No descent step exists: numerical stationarity.
            None => converged = true,
        }
    }
    if !converged {
        return Err(EstimationError::NonConvergence {
            iterations,
            last_step: f64::INFINITY,
        });
    }
    let residual = &meas.z - model.measure(&x)?;
    Ok(EstimationResult {
        x_est: x,
        objective: f_current,
        residual,
        iterations,
        converged,
    })
}

/// Adds `alpha * step` (estimation view) to the state; `None` if the
/// update leaves the voltage-positive region.
fn apply_step(
    model: &NetworkModel,
    x: &StateVector,
    step: &DVector<f64>,
    alpha: f64,
) -> Option<StateVector> {
    let n = model.n_bus();
    let mut full = x.to_full();
    for (free, delta) in step.iter().enumerate() {
        let idx = model.free_to_full_index(free);
        full[idx] += alpha * delta;
    }
    for i in n..2 * n {
        if full[i] <= 0.0 {
            return None;
        }
    }
    StateVector::from_full(&full).ok()
}

/// Outcome of the chi-square bad-data test.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BddVerdict {
    /// Weighted residual sum of squares at the estimate.
    pub statistic: f64,
    /// Chi-square quantile at 1 - alpha with `dof` degrees of freedom.
    pub threshold: f64,
    pub passed: bool,
    pub dof: usize,
}

/// Chi-square test on a WLS objective value with `m - n` degrees of
/// freedom at significance `alpha`.
pub fn chi_square_verdict(
    statistic: f64,
    m: usize,
    n: usize,
    alpha: f64,
) -> Result<BddVerdict, EstimationError> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(EstimationError::InvalidAlpha(alpha));
    }
    if m <= n {
        return Err(EstimationError::InvalidDof { m, n });
    }
    let dof = m - n;
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    let threshold = dist.inverse_cdf(1.0 - alpha);
    Ok(BddVerdict {
        statistic,
        threshold,
        passed: statistic <= threshold,
        dof,
    })
}

/// Bad-data check for an AC estimation result.
pub fn bdd_check(
    result: &EstimationResult,
    meas: &MeasurementVector,
    alpha: f64,
) -> Result<BddVerdict, EstimationError> {
    let n = 2 * result.x_est.n_bus() - 1;
    chi_square_verdict(result.objective, meas.len(), n, alpha)
}
