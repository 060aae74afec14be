//! Network model: buses, branches, the bus admittance matrix, the
//! measurement function `h(x)` and its Jacobian `H(x)`.
//!
//! All quantities are per-unit on the system MVA base; angles are radians.
//! A `NetworkModel` is immutable after construction and safe to share
//! across threads.

mod case;

pub use case::{ieee30, load_case};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid network: {0}")]
    Validation(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Role of a bus in the power-flow problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    /// Reference bus: fixed angle (0 rad) and voltage magnitude.
    Slack,
    /// Generator bus: fixed active injection and voltage magnitude.
    Pv,
    /// Load bus: fixed active and reactive injection.
    Pq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Base active load, p.u.
    pub base_load_p: f64,
    /// Base reactive load, p.u.
    pub base_load_q: f64,
    /// Scheduled active generation, p.u.
    pub gen_p: f64,
    /// Voltage setpoint for slack/PV buses, p.u.
    pub voltage_setpoint: f64,
    /// Shunt conductance, p.u.
    pub shunt_g: f64,
    /// Shunt susceptance, p.u.
    pub shunt_b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series resistance, p.u.
    pub r: f64,
    /// Series reactance, p.u.
    pub x: f64,
    /// Total line charging susceptance, p.u.
    pub b_charging: f64,
    /// Off-nominal turns ratio on the from side (1.0 for lines).
    pub tap_ratio: f64,
}

impl Branch {
    /// Series admittance 1/(r + jx).
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(self.r, self.x).inv()
    }
}

/// A single entry of the measurement plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementKind {
    /// Net active power injection at a bus.
    PInjection(usize),
    /// Net reactive power injection at a bus.
    QInjection(usize),
    /// Active power flow at the from end of a branch (by branch index).
    PFlow(usize),
    /// Reactive power flow at the from end of a branch.
    QFlow(usize),
    /// Voltage magnitude at a bus.
    VMagnitude(usize),
}

/// Per-bus voltage magnitudes (p.u.) and phase angles (rad).
///
/// The slack-bus angle is stored but pinned to 0; the estimation view of
/// the state excludes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
}

impl StateVector {
    pub fn new(theta: Vec<f64>, v: Vec<f64>) -> Result<Self, GridError> {
        if theta.len() != v.len() {
            return Err(GridError::Dimension {
                expected: theta.len(),
                got: v.len(),
            });
        }
        if v.iter().any(|&vi| !(vi > 0.0) || !vi.is_finite()) {
            return Err(GridError::Validation(
                "voltage magnitudes must be positive and finite".into(),
            ));
        }
        Ok(Self { theta, v })
    }

    /// Flat start: all magnitudes 1.0, all angles 0.
    pub fn flat(n_bus: usize) -> Self {
        Self {
            theta: vec![0.0; n_bus],
            v: vec![1.0; n_bus],
        }
    }

    pub fn n_bus(&self) -> usize {
        self.theta.len()
    }

    /// Full state layout: `[theta_0 .. theta_{n-1}, v_0 .. v_{n-1}]`.
    pub fn to_full(&self) -> DVector<f64> {
        let n = self.n_bus();
        DVector::from_fn(2 * n, |i, _| {
            if i < n {
                self.theta[i]
            } else {
                self.v[i - n]
            }
        })
    }

    pub fn from_full(full: &DVector<f64>) -> Result<Self, GridError> {
        if full.len() % 2 != 0 {
            return Err(GridError::Dimension {
                expected: full.len() + 1,
                got: full.len(),
            });
        }
        let n = full.len() / 2;
        Self::new(
            full.iter().take(n).copied().collect(),
            full.iter().skip(n).copied().collect(),
        )
    }
}

/// A validated transmission network plus its measurement configuration.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub measurement_plan: Vec<MeasurementKind>,
    /// System MVA base used when converting case-file data, MVA.
    pub mva_base: f64,
    y_bus: DMatrix<Complex64>,
}

impl NetworkModel {
    /// Validates the parts, builds and caches the admittance matrix, and
    /// installs the full default measurement plan.
    pub fn new(buses: Vec<Bus>, branches: Vec<Branch>, mva_base: f64) -> Result<Self, GridError> {
        validate(&buses, &branches)?;
        let y_bus = assemble_ybus(&buses, &branches);
        let mut model = Self {
            buses,
            branches,
            measurement_plan: Vec::new(),
            mva_base,
            y_bus,
        };
        model.measurement_plan = model.default_plan();
        Ok(model)
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Number of state variables (angles plus magnitudes, slack included).
    pub fn n_states(&self) -> usize {
        2 * self.n_bus()
    }

    /// Free states seen by the estimator (slack angle excluded).
    pub fn n_free_states(&self) -> usize {
        self.n_states() - 1
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated network has a slack bus")
    }

    /// Cached bus admittance matrix G + jB.
    pub fn y_bus(&self) -> &DMatrix<Complex64> {
        &self.y_bus
    }

    /// Full plan: every bus P/Q injection, every branch P/Q flow at the
    /// from end, every bus voltage magnitude.
    pub fn default_plan(&self) -> Vec<MeasurementKind> {
        let nb = self.n_bus();
        let nl = self.branches.len();
        let mut plan = Vec::with_capacity(2 * nb + 2 * nl + nb);
        plan.extend((0..nb).map(MeasurementKind::PInjection));
        plan.extend((0..nb).map(MeasurementKind::QInjection));
        plan.extend((0..nl).map(MeasurementKind::PFlow));
        plan.extend((0..nl).map(MeasurementKind::QFlow));
        plan.extend((0..nb).map(MeasurementKind::VMagnitude));
        plan
    }

    /// Number of measurements in the active plan.
    pub fn n_measurements(&self) -> usize {
        self.measurement_plan.len()
    }

    /// Maps an estimation-view column to the full-state index, skipping the
    /// pinned slack angle.
    pub fn free_to_full_index(&self, free: usize) -> usize {
        let slack = self.slack_index();
        if free < slack {
            free
        } else {
            free + 1
        }
    }

    /// Inverse of [`free_to_full_index`]; `None` for the slack angle.
    pub fn full_to_free_index(&self, full: usize) -> Option<usize> {
        let slack = self.slack_index();
        match full.cmp(&slack) {
            std::cmp::Ordering::Less => Some(full),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(full - 1),
        }
    }

    fn check_state(&self, x: &StateVector) -> Result<(), GridError> {
        if x.n_bus() != self.n_bus() {
            return Err(GridError::Dimension {
                expected: self.n_bus(),
                got: x.n_bus(),
            });
        }
        Ok(())
    }

    /// Net complex injection S_i = P_i + jQ_i at every bus for state `x`.
    pub fn injections(&self, x: &StateVector) -> Result<Vec<Complex64>, GridError> {
        self.check_state(x)?;
        let n = self.n_bus();
        let mut s = vec![Complex64::ZERO; n];
        for i in 0..n {
            let (mut p, mut q) = (0.0, 0.0);
            for j in 0..n {
                let y = self.y_bus[(i, j)];
                if y == Complex64::ZERO && i != j {
                    continue;
                }
                let th = x.theta[i] - x.theta[j];
                let (sin, cos) = th.sin_cos();
                p += x.v[j] * (y.re * cos + y.im * sin);
                q += x.v[j] * (y.re * sin - y.im * cos);
            }
            s[i] = Complex64::new(x.v[i] * p, x.v[i] * q);
        }
        Ok(s)
    }

    /// From-end complex power flow of branch `k` for state `x`.
    pub fn branch_flow_from(&self, k: usize, x: &StateVector) -> Complex64 {
        let br = &self.branches[k];
        let (f, t) = (br.from, br.to);
        let (a_ff, a_ft) = branch_from_admittances(br);
        let th = x.theta[f] - x.theta[t];
        let (sin, cos) = th.sin_cos();
        let (g1, b1) = (a_ff.re, a_ff.im);
        let (g2, b2) = (a_ft.re, a_ft.im);
        let vf = x.v[f];
        let vt = x.v[t];
        let p = vf * vf * g1 + vf * vt * (g2 * cos + b2 * sin);
        let q = -vf * vf * b1 + vf * vt * (g2 * sin - b2 * cos);
        Complex64::new(p, q)
    }

    /// Evaluates the measurement function h(x) in plan order. Deterministic
    /// and noise-free.
    pub fn measure(&self, x: &StateVector) -> Result<DVector<f64>, GridError> {
        self.check_state(x)?;
        let inj = self.injections(x)?;
        let mut flows: Vec<Option<Complex64>> = vec![None; self.branches.len()];
        let mut z = DVector::zeros(self.measurement_plan.len());
        for (row, kind) in self.measurement_plan.iter().enumerate() {
            z[row] = match *kind {
                MeasurementKind::PInjection(i) => inj[i].re,
                MeasurementKind::QInjection(i) => inj[i].im,
                MeasurementKind::PFlow(k) => {
                    flows[k].get_or_insert_with(|| self.branch_flow_from(k, x)).re
                }
                MeasurementKind::QFlow(k) => {
                    flows[k].get_or_insert_with(|| self.branch_flow_from(k, x)).im
                }
                MeasurementKind::VMagnitude(i) => x.v[i],
            };
        }
        Ok(z)
    }

    /// Analytic Jacobian of h over the full state `[theta; v]`,
    /// m x 2n, slack column included.
    pub fn jacobian_full(&self, x: &StateVector) -> Result<DMatrix<f64>, GridError> {
        self.check_state(x)?;
        let n = self.n_bus();
        let m = self.measurement_plan.len();
        let inj = self.injections(x)?;
        let mut h = DMatrix::zeros(m, 2 * n);
        for (row, kind) in self.measurement_plan.iter().enumerate() {
            match *kind {
                MeasurementKind::PInjection(i) => {
                    self.injection_partials(&mut h, row, i, x, inj[i], true)
                }
                MeasurementKind::QInjection(i) => {
                    self.injection_partials(&mut h, row, i, x, inj[i], false)
                }
                MeasurementKind::PFlow(k) => self.flow_partials(&mut h, row, k, x, true),
                MeasurementKind::QFlow(k) => self.flow_partials(&mut h, row, k, x, false),
                MeasurementKind::VMagnitude(i) => h[(row, n + i)] = 1.0,
            }
        }
        Ok(h)
    }

    /// Jacobian in the estimation view: the pinned slack-angle column is
    /// dropped, m x (2n - 1).
    pub fn jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, GridError> {
        let full = self.jacobian_full(x)?;
        Ok(full.remove_column(self.slack_index()))
    }

    /// Jacobian of all bus injections `[P_0..P_{n-1}, Q_0..Q_{n-1}]` over the
    /// full state `[theta; v]`, independent of the measurement plan.
    pub fn injection_jacobian(&self, x: &StateVector) -> Result<DMatrix<f64>, GridError> {
        self.check_state(x)?;
        let n = self.n_bus();
        let inj = self.injections(x)?;
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            self.injection_partials(&mut h, i, i, x, inj[i], true);
            self.injection_partials(&mut h, n + i, i, x, inj[i], false);
        }
        Ok(h)
    }

    fn injection_partials(
        &self,
        h: &mut DMatrix<f64>,
        row: usize,
        i: usize,
        x: &StateVector,
        s_i: Complex64,
        active: bool,
    ) {
        let n = self.n_bus();
        let vi = x.v[i];
        let y_ii = self.y_bus[(i, i)];
        for j in 0..n {
            if j == i {
                continue;
            }
            let y = self.y_bus[(i, j)];
            if y == Complex64::ZERO {
                continue;
            }
            let th = x.theta[i] - x.theta[j];
            let (sin, cos) = th.sin_cos();
            let gc_bs = y.re * cos + y.im * sin;
            let gs_bc = y.re * sin - y.im * cos;
            if active {
                h[(row, j)] = vi * x.v[j] * gs_bc;
                h[(row, n + j)] = vi * gc_bs;
            } else {
                h[(row, j)] = -vi * x.v[j] * gc_bs;
                h[(row, n + j)] = vi * gs_bc;
            }
        }
        if active {
            h[(row, i)] = -s_i.im - y_ii.im * vi * vi;
            h[(row, n + i)] = s_i.re / vi + y_ii.re * vi;
        } else {
            h[(row, i)] = s_i.re - y_ii.re * vi * vi;
            h[(row, n + i)] = s_i.im / vi - y_ii.im * vi;
        }
    }

    fn flow_partials(&self, h: &mut DMatrix<f64>, row: usize, k: usize, x: &StateVector, active: bool) {
        let n = self.n_bus();
        let br = &self.branches[k];
        let (f, t) = (br.from, br.to);
        let (a_ff, a_ft) = branch_from_admittances(br);
        let (g1, b1) = (a_ff.re, a_ff.im);
        let (g2, b2) = (a_ft.re, a_ft.im);
        let th = x.theta[f] - x.theta[t];
        let (sin, cos) = th.sin_cos();
        let (vf, vt) = (x.v[f], x.v[t]);
        if active {
            let d_theta = vf * vt * (-g2 * sin + b2 * cos);
            h[(row, f)] += d_theta;
            h[(row, t)] -= d_theta;
            h[(row, n + f)] += 2.0 * vf * g1 + vt * (g2 * cos + b2 * sin);
            h[(row, n + t)] += vf * (g2 * cos + b2 * sin);
        } else {
            let d_theta = vf * vt * (g2 * cos + b2 * sin);
            h[(row, f)] += d_theta;
            h[(row, t)] -= d_theta;
            h[(row, n + f)] += -2.0 * vf * b1 + vt * (g2 * sin - b2 * cos);
            h[(row, n + t)] += vf * (g2 * sin - b2 * cos);
        }
    }
}

/// From-side pi-model admittances (a_ff, a_ft) such that
/// I_from = a_ff V_f + a_ft V_t.
fn branch_from_admittances(br: &Branch) -> (Complex64, Complex64) {
    let y = br.series_admittance();
    let shunt = Complex64::new(0.0, br.b_charging / 2.0);
    let tap = br.tap_ratio;
    ((y + shunt) / (tap * tap), -y / tap)
}

fn assemble_ybus(buses: &[Bus], branches: &[Branch]) -> DMatrix<Complex64> {
    let n = buses.len();
    let mut y = DMatrix::from_element(n, n, Complex64::ZERO);
    for br in branches {
        let ys = br.series_admittance();
        let shunt = Complex64::new(0.0, br.b_charging / 2.0);
        let tap = br.tap_ratio;
        let (f, t) = (br.from, br.to);
        y[(f, f)] += (ys + shunt) / (tap * tap);
        y[(t, t)] += ys + shunt;
        y[(f, t)] += -ys / tap;
        y[(t, f)] += -ys / tap;
    }
    for (i, bus) in buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }
    y
}

fn validate(buses: &[Bus], branches: &[Branch]) -> Result<(), GridError> {
    if buses.is_empty() {
        return Err(GridError::Validation("network has no buses".into()));
    }
    let n_slack = buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if n_slack != 1 {
        return Err(GridError::Validation(format!(
            "expected exactly one slack bus, found {n_slack}"
        )));
    }
    for (i, bus) in buses.iter().enumerate() {
        if bus.id != i {
            return Err(GridError::Validation(format!(
                "bus ids must be dense and ordered; bus {} found at position {i}",
                bus.id
            )));
        }
        let fields = [
            bus.base_load_p,
            bus.base_load_q,
            bus.gen_p,
            bus.voltage_setpoint,
            bus.shunt_g,
            bus.shunt_b,
        ];
        if fields.iter().any(|f| !f.is_finite()) {
            return Err(GridError::Validation(format!("bus {i} has non-finite data")));
        }
        if bus.kind != BusKind::Pq && bus.voltage_setpoint <= 0.0 {
            return Err(GridError::Validation(format!(
                "bus {i} is {:?} but has voltage setpoint {}",
                bus.kind, bus.voltage_setpoint
            )));
        }
    }
    let n = buses.len();
    for (k, br) in branches.iter().enumerate() {
        if br.from >= n || br.to >= n {
            return Err(GridError::Validation(format!(
                "branch {k} references bus outside the network"
            )));
        }
        if br.from == br.to {
            return Err(GridError::Validation(format!(
                "branch {k} connects bus {} to itself",
                br.from
            )));
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(GridError::Validation(format!(
                "branch {k} has degenerate zero impedance"
            )));
        }
        if !(br.tap_ratio > 0.0) {
            return Err(GridError::Validation(format!(
                "branch {k} has non-positive tap ratio {}",
                br.tap_ratio
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn two_bus(r: f64, x: f64) -> NetworkModel {
        let buses = vec![
            Bus {
                id: 0,
                kind: BusKind::Slack,
                base_load_p: 0.0,
                base_load_q: 0.0,
                gen_p: 0.0,
                voltage_setpoint: 1.0,
                shunt_g: 0.0,
                shunt_b: 0.0,
            },
            Bus {
                id: 1,
                kind: BusKind::Pq,
                base_load_p: 0.5,
                base_load_q: 0.1,
                gen_p: 0.0,
                voltage_setpoint: 1.0,
                shunt_g: 0.0,
                shunt_b: 0.0,
            },
        ];
        let branches = vec![Branch {
            from: 0,
            to: 1,
            r,
            x,
            b_charging: 0.0,
            tap_ratio: 1.0,
        }];
        NetworkModel::new(buses, branches, 100.0).unwrap()
    }

    #[test]
    fn ybus_two_bus_lossless() {
        let model = two_bus(0.0, 0.1);
        let y = model.y_bus();
        assert_abs_diff_eq!(y[(0, 0)].im, -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[(0, 1)].im, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[(1, 0)].im, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[(1, 1)].im, -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[(0, 0)].re, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ybus_empty_network_is_zero() {
        let buses = vec![Bus {
            id: 0,
            kind: BusKind::Slack,
            base_load_p: 0.0,
            base_load_q: 0.0,
            gen_p: 0.0,
            voltage_setpoint: 1.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        }];
        let model = NetworkModel::new(buses, vec![], 100.0).unwrap();
        assert_eq!(model.y_bus()[(0, 0)], Complex64::ZERO);
    }

    #[test]
    fn measure_flat_start_is_trivial() {
        let model = two_bus(0.0, 0.1);
        let z = model.measure(&StateVector::flat(2)).unwrap();
        // Plan order: p_inj x2, q_inj x2, p_flow, q_flow, v x2.
        for i in 0..6 {
            assert_abs_diff_eq!(z[i], 0.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(z[6], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(z[7], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn measure_single_line_flow() {
        let model = two_bus(0.0, 0.1);
        let x = StateVector::new(vec![0.0, -0.1], vec![1.0, 1.0]).unwrap();
        let z = model.measure(&x).unwrap();
        // p_flow(0->1) = sin(0.1)/0.1.
        let expected = 0.1f64.sin() * 10.0;
        assert_abs_diff_eq!(z[4], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(z[4], 0.99833, epsilon = 1e-5);
    }

    #[test]
    fn vmagnitude_jacobian_row_is_unit() {
        let model = two_bus(0.01, 0.1);
        let x = StateVector::new(vec![0.0, -0.05], vec![1.0, 0.98]).unwrap();
        let h = model.jacobian_full(&x).unwrap();
        let n = model.n_bus();
        // Rows 6 and 7 are the voltage magnitudes of buses 0 and 1.
        for (row, bus) in [(6usize, 0usize), (7, 1)] {
            for col in 0..2 * n {
                let expected = if col == n + bus { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(h[(row, col)], expected, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn power_balance_equals_losses() {
        // For r >= 0, the sum of injections is the total resistive loss.
        let model = two_bus(0.05, 0.1);
        let x = StateVector::new(vec![0.0, -0.12], vec![1.0, 0.97]).unwrap();
        let inj = model.injections(&x).unwrap();
        let total_p: f64 = inj.iter().map(|s| s.re).sum();
        let s_from = model.branch_flow_from(0, &x);
        // Flow into the line at both ends: from-end plus reversed-orientation flow.
        let rev = NetworkModel::new(
            model.buses.clone(),
            vec![Branch {
                from: 1,
                to: 0,
                ..model.branches[0]
            }],
            100.0,
        )
        .unwrap();
        let s_to = rev.branch_flow_from(0, &x);
        let loss = s_from.re + s_to.re;
        assert!(loss >= 0.0);
        assert_abs_diff_eq!(total_p, loss, epsilon = 1e-9);
    }

    #[test]
    fn state_vector_round_trip() {
        let x = StateVector::new(vec![0.0, -0.2, 0.1], vec![1.0, 0.95, 1.02]).unwrap();
        let full = x.to_full();
        let back = StateVector::from_full(&full).unwrap();
        assert_eq!(x, back);
    }

    #[test]
    fn rejects_networks_without_single_slack() {
        let mut buses = two_bus(0.0, 0.1).buses;
        buses[0].kind = BusKind::Pq;
        let branches = vec![Branch {
            from: 0,
            to: 1,
            r: 0.0,
            x: 0.1,
            b_charging: 0.0,
            tap_ratio: 1.0,
        }];
        assert!(NetworkModel::new(buses, branches, 100.0).is_err());
    }

    #[test]
    fn rejects_degenerate_branch() {
        let buses = two_bus(0.0, 0.1).buses;
        let branches = vec![Branch {
            from: 0,
            to: 1,
            r: 0.0,
            x: 0.0,
            b_charging: 0.0,
            tap_ratio: 1.0,
        }];
        assert!(NetworkModel::new(buses, branches, 100.0).is_err());
    }
}
