//! Online correction loop: a queue of the last w-1 trusted (corrected or
//! normal) states provides context, each incoming attacked state is
//! denoised by the autoencoder, the corrected state is fed back into the
//! queue, and attacked coordinates are identified by thresholding the
//! attacked-vs-corrected deltas.
//!
//! Detection is assumed upstream: every state handed to [`Corrector::correct`]
//! has already been flagged as attacked; clean states pass through almost
//! unchanged by construction.

use crate::grid::StateVector;
use crate::neural::{DaeModel, NeuralError};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("queue holds {got} states but the window needs {needed}; warm up first")]
    ColdStart { needed: usize, got: usize },
    #[error("state has {got} buses, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("warm-up needs at least {needed} states, got {got}")]
    NotEnoughWarmup { needed: usize, got: usize },
    #[error("corrected state is unphysical: {0}")]
    UnphysicalCorrection(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Per-coordinate identification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentificationThresholds {
    /// Angle threshold, rad.
    pub theta: f64,
    /// Magnitude threshold, p.u.
    pub v: f64,
}

impl Default for IdentificationThresholds {
    fn default() -> Self {
        Self {
            theta: 0.01,
            v: 0.01,
        }
    }
}

/// Ring of the last w-1 trusted states, newest last. Never contains raw
/// attacked states.
#[derive(Debug, Clone)]
pub struct StateQueue {
    states: VecDeque<StateVector>,
    capacity: usize,
}

impl StateQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            states: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.states.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn newest(&self) -> Option<&StateVector> {
        self.states.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StateVector> {
        self.states.iter()
    }

    /// Pushes a trusted state, dropping the oldest when full.
    pub fn push(&mut self, state: StateVector) {
        if self.states.len() == self.capacity {
            self.states.pop_front();
        }
        self.states.push_back(state);
    }

    /// Fills the queue from trusted history; keeps the last `capacity`
    /// entries.
    pub fn warm_up(&mut self, states: &[StateVector]) -> Result<(), PipelineError> {
        if states.len() < self.capacity {
            return Err(PipelineError::NotEnoughWarmup {
                needed: self.capacity,
                got: states.len(),
            });
        }
        self.states.clear();
        for s in &states[states.len() - self.capacity..] {
            self.states.push_back(s.clone());
        }
        Ok(())
    }
}

/// Result of correcting one attacked state.
#[derive(Debug, Clone, Serialize)]
pub struct CorrectionOutcome {
    pub corrected: StateVector,
    /// State coordinates whose delta exceeded the matching threshold.
    pub flagged: Vec<usize>,
    /// |attacked - corrected| per state coordinate.
    pub deltas: Vec<f64>,
}

/// Compares attacked and corrected states against the thresholds: angle
/// coordinates against `theta`, magnitude coordinates against `v`.
/// Returns the flagged indices (full-state layout) and all deltas.
pub fn identify(
    attacked: &StateVector,
    corrected: &StateVector,
    thresholds: &IdentificationThresholds,
) -> (Vec<usize>, Vec<f64>) {
    let n = attacked.n_bus();
    let mut deltas = Vec::with_capacity(2 * n);
    let mut flagged = Vec::new();
    for i in 0..n {
        deltas.push((attacked.theta[i] - corrected.theta[i]).abs());
    }
    for i in 0..n {
        deltas.push((attacked.v[i] - corrected.v[i]).abs());
    }
    for (k, &d) in deltas.iter().enumerate() {
        let limit = if k < n { thresholds.theta } else { thresholds.v };
        if d > limit {
            flagged.push(k);
        }
    }
    (flagged, deltas)
}

/// The online corrector: model, feedback queue, and thresholds.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub model: DaeModel,
    pub queue: StateQueue,
    pub thresholds: IdentificationThresholds,
    slack_index: usize,
}

impl Corrector {
    pub fn new(model: DaeModel, thresholds: IdentificationThresholds, slack_index: usize) -> Self {
        let capacity = model.w - 1;
        Self {
            model,
            queue: StateQueue::new(capacity),
            thresholds,
            slack_index,
        }
    }

    pub fn n_bus(&self) -> usize {
        self.model.n_states() / 2
    }

    /// Seeds the queue with trusted history (last w-1 states kept).
    pub fn warm_up(&mut self, states: &[StateVector]) -> Result<(), PipelineError> {
        for s in states {
            self.check_dims(s)?;
        }
        self.queue.warm_up(states)
    }

    fn check_dims(&self, state: &StateVector) -> Result<(), PipelineError> {
        if state.n_bus() != self.n_bus() {
            return Err(PipelineError::Dimension {
                expected: self.n_bus(),
                got: state.n_bus(),
            });
        }
        Ok(())
    }

    /// Corrects one attacked state: the autoencoder runs on
    /// [queue .. attacked], the denormalized final output row becomes the
    /// corrected state (slack angle pinned to 0), the queue advances with
    /// it, and thresholding yields the flagged coordinates.
    ///
    /// Refuses to run on a cold queue; garbage context would poison the
    /// feedback loop.
    pub fn correct(&mut self, attacked: &StateVector) -> Result<CorrectionOutcome, PipelineError> {
        self.check_dims(attacked)?;
        if !self.queue.is_full() {
            return Err(PipelineError::ColdStart {
                needed: self.queue.capacity(),
                got: self.queue.len(),
            });
        }
        let n = self.n_bus();
        let mut rows: Vec<Vec<f64>> = self
            .queue
            .iter()
            .map(|s| {
                let full = s.to_full();
                full.as_slice().to_vec()
            })
            .collect();
        rows.push(attacked.to_full().as_slice().to_vec());

        let mut out = self.model.correct_window(&rows)?;
        out[self.slack_index] = 0.0;
        let theta = out[..n].to_vec();
        let v = out[n..].to_vec();
        if v.iter().any(|&vi| !(vi > 0.0) || !vi.is_finite()) {
            return Err(PipelineError::UnphysicalCorrection(
                "voltage magnitude not positive".into(),
            ));
        }
        let corrected = StateVector { theta, v };
        let (flagged, deltas) = identify(attacked, &corrected, &self.thresholds);
        self.queue.push(corrected.clone());
        Ok(CorrectionOutcome {
            corrected,
            flagged,
            deltas,
        })
    }
}
