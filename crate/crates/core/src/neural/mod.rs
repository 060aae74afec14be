//! LSTM denoising autoencoder: two encoder LSTM layers, a repeat-vector
//! bridge carrying the final encoder state, a decoder LSTM, and a
//! time-distributed linear head. Forward, backward, and training are
//! implemented from scratch on dense matrices.

mod io;
mod lstm;
mod train;

pub use io::{load_model, save_model};
pub use lstm::{CellActivation, LstmCache, LstmLayerGrads, LstmLayerParams};
pub use train::{train, EpochStats, OptimizerKind, TrainConfig, TrainReport};

use crate::dataset::{Normalizer, WindowSample};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("gradients overflowed (non-finite values)")]
    NumericalOverflow,
    #[error("model file corrupt: {0}")]
    Corrupt(String),
    #[error("model file version {got} unsupported (expected {expected})")]
    Version { expected: u32, got: u32 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hidden sizes of the three LSTM layers (encoder 1, encoder 2, decoder).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSizes {
    pub enc1: usize,
    pub enc2: usize,
    pub dec1: usize,
}

impl LayerSizes {
    /// Full-scale reproduction sizes.
    pub const FULL: LayerSizes = LayerSizes {
        enc1: 128,
        enc2: 64,
        dec1: 128,
    };
    /// Desk-scale sizes for tests and CI.
    pub const DESK: LayerSizes = LayerSizes {
        enc1: 32,
        enc2: 16,
        dec1: 32,
    };
}

#[derive(Debug, Clone)]
pub struct DaeModel {
    pub enc1: LstmLayerParams,
    pub enc2: LstmLayerParams,
    pub dec1: LstmLayerParams,
    /// Output head, n_states x dec1_units.
    pub head_w: DMatrix<f64>,
    pub head_b: DMatrix<f64>,
    /// Window length the model was built for.
    pub w: usize,
    pub normalizer: Normalizer,
}

impl DaeModel {
    /// Fresh model with Glorot-uniform weights drawn from `seed`.
    pub fn new(
        w: usize,
        n_states: usize,
        sizes: LayerSizes,
        activation: CellActivation,
        normalizer: Normalizer,
        seed: u64,
    ) -> Self {
        assert_eq!(normalizer.n_states(), n_states, "normalizer dimension");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc1 = LstmLayerParams::init(n_states, sizes.enc1, activation, &mut rng);
        let enc2 = LstmLayerParams::init(sizes.enc1, sizes.enc2, activation, &mut rng);
        let dec1 = LstmLayerParams::init(sizes.enc2, sizes.dec1, activation, &mut rng);
        let lim = (6.0 / (sizes.dec1 + n_states) as f64).sqrt();
        let head_w = DMatrix::from_fn(n_states, sizes.dec1, |_, _| rng.random_range(-lim..lim));
        let head_b = DMatrix::zeros(n_states, 1);
        Self {
            enc1,
            enc2,
            dec1,
            head_w,
            head_b,
            w,
            normalizer,
        }
    }

    pub fn n_states(&self) -> usize {
        self.head_w.nrows()
    }

    pub fn sizes(&self) -> LayerSizes {
        LayerSizes {
            enc1: self.enc1.units,
            enc2: self.enc2.units,
            dec1: self.dec1.units,
        }
    }

    pub fn activation(&self) -> CellActivation {
        self.enc1.activation
    }

    /// Parameter tensors in serialization order.
    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        vec![
            &self.enc1.w_in,
            &self.enc1.w_rec,
            &self.enc1.bias,
            &self.enc2.w_in,
            &self.enc2.w_rec,
            &self.enc2.bias,
            &self.dec1.w_in,
            &self.dec1.w_rec,
            &self.dec1.bias,
            &self.head_w,
            &self.head_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        vec![
            &mut self.enc1.w_in,
            &mut self.enc1.w_rec,
            &mut self.enc1.bias,
            &mut self.enc2.w_in,
            &mut self.enc2.w_rec,
            &mut self.enc2.bias,
            &mut self.dec1.w_in,
            &mut self.dec1.w_rec,
            &mut self.dec1.bias,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    /// Forward pass with cached activations.
    ///
    /// The encoder consumes the window, the final second-layer state is
    /// repeated w times into the decoder, and the head maps every decoder
    /// timestep to n_states outputs.
    pub fn forward(&self, batch: &Batch) -> Result<ForwardPass, NeuralError> {
        if batch.xs.len() != self.w {
            return Err(NeuralError::Shape(format!(
                "batch has {} timesteps, model expects {}",
                batch.xs.len(),
                self.w
            )));
        }
        let n = self.n_states();
        if batch.xs[0].nrows() != n {
            return Err(NeuralError::Shape(format!(
                "batch rows {} != n_states {}",
                batch.xs[0].nrows(),
                n
            )));
        }
        let b = batch.xs[0].ncols();
        if b == 0 {
            return Err(NeuralError::EmptyBatch);
        }
        let enc1 = self.enc1.forward(&batch.xs);
        let enc2 = self.enc2.forward(&enc1.h);
        let bridge = enc2.h[self.w - 1].clone();
        let dec_in: Vec<DMatrix<f64>> = (0..self.w).map(|_| bridge.clone()).collect();
        let dec1 = self.dec1.forward(&dec_in);
        let outputs: Vec<DMatrix<f64>> = dec1
            .h
            .iter()
            .map(|h| {
                let mut y = &self.head_w * h;
                for col in 0..b {
                    for row in 0..n {
                        y[(row, col)] += self.head_b[(row, 0)];
                    }
                }
                y
            })
            .collect();
        Ok(ForwardPass {
            outputs,
            enc1,
            enc2,
            dec1,
            dec_in,
        })
    }

    /// Exact gradients of the mean-squared-error objective for this batch.
    /// Clipping is the trainer's job, not part of the backward pass.
    pub fn backward(
        &self,
        batch: &Batch,
        pass: &ForwardPass,
        targets: &[DMatrix<f64>],
    ) -> Result<DaeGrads, NeuralError> {
        let n = self.n_states();
        let b = batch.xs[0].ncols();
        let elems = (b * self.w * n) as f64;
        if targets.len() != self.w {
            return Err(NeuralError::Shape("target timestep count".into()));
        }

        let mut head_w = DMatrix::zeros(n, self.dec1.units);
        let mut head_b = DMatrix::zeros(n, 1);
        let mut d_dech: Vec<DMatrix<f64>> = Vec::with_capacity(self.w);
        for t in 0..self.w {
            let mut dy = &pass.outputs[t] - &targets[t];
            dy.scale_mut(2.0 / elems);
            head_w += &dy * pass.dec1.h[t].transpose();
            for col in 0..b {
                for row in 0..n {
                    head_b[(row, 0)] += dy[(row, col)];
                }
            }
            d_dech.push(self.head_w.transpose() * dy);
        }

        let (dec1_grads, d_decin) = self.dec1.backward(&pass.dec_in, &pass.dec1, &d_dech);

        // The repeat-vector bridge fans the final encoder state into every
        // decoder timestep; its gradient is the sum over timesteps.
        let mut d_bridge = DMatrix::zeros(self.enc2.units, b);
        for d in &d_decin {
            d_bridge += d;
        }
        let mut d_enc2h = vec![DMatrix::zeros(self.enc2.units, b); self.w];
        d_enc2h[self.w - 1] = d_bridge;

        let (enc2_grads, d_enc1h) = self.enc2.backward(&pass.enc1.h, &pass.enc2, &d_enc2h);
        let (enc1_grads, _) = self.enc1.backward(&batch.xs, &pass.enc1, &d_enc1h);

        let grads = DaeGrads {
            enc1: enc1_grads,
            enc2: enc2_grads,
            dec1: dec1_grads,
            head_w,
            head_b,
        };
        if grads.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(NeuralError::NumericalOverflow);
        }
        Ok(grads)
    }

    /// Denoises one window given `w` raw (state-unit) rows; returns the
    /// denormalized final output row. Row length must equal n_states.
    pub fn correct_window(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, NeuralError> {
        let n = self.n_states();
        if rows.len() != self.w {
            return Err(NeuralError::Shape(format!(
                "got {} rows, window needs {}",
                rows.len(),
                self.w
            )));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(NeuralError::Shape("row length != n_states".into()));
        }
        let xs: Vec<DMatrix<f64>> = rows
            .iter()
            .map(|r| {
                let mut row = r.clone();
                self.normalizer.apply_row(&mut row);
                DMatrix::from_column_slice(n, 1, &row)
            })
            .collect();
        let pass = self.forward(&Batch { xs })?;
        let mut out: Vec<f64> = pass.outputs[self.w - 1].column(0).iter().copied().collect();
        self.normalizer.invert_row(&mut out);
        Ok(out)
    }
}

/// A normalized minibatch: one (n_states x batch) matrix per timestep.
#[derive(Debug, Clone)]
pub struct Batch {
    pub xs: Vec<DMatrix<f64>>,
}

impl Batch {
    /// Assembles and normalizes inputs and targets from window samples.
    pub fn from_samples(
        samples: &[&WindowSample],
        normalizer: &Normalizer,
    ) -> Result<(Batch, Vec<DMatrix<f64>>), NeuralError> {
        let first = samples.first().ok_or(NeuralError::EmptyBatch)?;
        let (w, n) = (first.w(), first.n_states());
        let b = samples.len();
        let mut xs = vec![DMatrix::zeros(n, b); w];
        let mut ys = vec![DMatrix::zeros(n, b); w];
        for (col, sample) in samples.iter().enumerate() {
            if sample.w() != w || sample.n_states() != n {
                return Err(NeuralError::Shape("ragged batch".into()));
            }
            for t in 0..w {
                let mut xin = sample.input_row(t).to_vec();
                let mut tgt = sample.target_row(t).to_vec();
                normalizer.apply_row(&mut xin);
                normalizer.apply_row(&mut tgt);
                for row in 0..n {
                    xs[t][(row, col)] = xin[row];
                    ys[t][(row, col)] = tgt[row];
                }
            }
        }
        Ok((Batch { xs }, ys))
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Head outputs, one (n_states x batch) matrix per timestep.
    pub outputs: Vec<DMatrix<f64>>,
    pub enc1: LstmCache,
    pub enc2: LstmCache,
    pub dec1: LstmCache,
    pub dec_in: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct DaeGrads {
    pub enc1: LstmLayerGrads,
    pub enc2: LstmLayerGrads,
    pub dec1: LstmLayerGrads,
    pub head_w: DMatrix<f64>,
    pub head_b: DMatrix<f64>,
}

impl DaeGrads {
    pub fn tensors(&self) -> Vec<&DMatrix<f64>> {
        vec![
            &self.enc1.w_in,
            &self.enc1.w_rec,
            &self.enc1.bias,
            &self.enc2.w_in,
            &self.enc2.w_rec,
            &self.enc2.bias,
            &self.dec1.w_in,
            &self.dec1.w_rec,
            &self.dec1.bias,
            &self.head_w,
            &self.head_b,
        ]
    }
}

/// Mean squared error over all batch, timestep, and state elements.
pub fn mse(outputs: &[DMatrix<f64>], targets: &[DMatrix<f64>]) -> Result<f64, NeuralError> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(NeuralError::Shape("output/target timestep mismatch".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (y, t) in outputs.iter().zip(targets) {
        if y.shape() != t.shape() {
            return Err(NeuralError::Shape("output/target shape mismatch".into()));
        }
        sum += (y - t).map(|d| d * d).sum();
        count += y.len();
    }
    if count == 0 {
        return Err(NeuralError::EmptyBatch);
    }
    Ok(sum / count as f64)
}

/// Root-mean-square error, the reported training metric.
pub fn loss(outputs: &[DMatrix<f64>], targets: &[DMatrix<f64>]) -> Result<f64, NeuralError> {
    Ok(mse(outputs, targets)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity_normalizer(n: usize) -> Normalizer {
        Normalizer {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    fn tiny_model(seed: u64) -> DaeModel {
        DaeModel::new(
            3,
            2,
            LayerSizes {
                enc1: 4,
                enc2: 3,
                dec1: 4,
            },
            CellActivation::Relu,
            identity_normalizer(2),
            seed,
        )
    }

    fn random_batch(model: &DaeModel, b: usize, seed: u64) -> (Batch, Vec<DMatrix<f64>>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = model.n_states();
        let xs = (0..model.w)
            .map(|_| DMatrix::from_fn(n, b, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let ys = (0..model.w)
            .map(|_| DMatrix::from_fn(n, b, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        (Batch { xs }, ys)
    }

    #[test]
    fn forward_shapes_flow_through_the_bridge() {
        let n = 60;
        let model = DaeModel::new(
            5,
            n,
            LayerSizes {
                enc1: 8,
                enc2: 4,
                dec1: 8,
            },
            CellActivation::Relu,
            identity_normalizer(n),
            7,
        );
        let (batch, _) = random_batch(&model, 3, 1);
        let pass = model.forward(&batch).unwrap();
        assert_eq!(pass.outputs.len(), 5);
        assert_eq!(pass.outputs[0].shape(), (60, 3));
        assert_eq!(pass.enc2.h[4].shape(), (4, 3));
        assert_eq!(pass.dec1.h[0].shape(), (8, 3));
        // Repeat-vector bridge: every decoder input equals the final
        // encoder state, exactly.
        for t in 0..5 {
            assert_eq!(pass.dec_in[t], pass.enc2.h[4]);
        }
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut model = tiny_model(3);
        for t in model.tensors_mut() {
            t.fill(0.0);
        }
        let (batch, _) = random_batch(&model, 2, 9);
        let pass = model.forward(&batch).unwrap();
        for y in &pass.outputs {
            assert_eq!(y.amax(), 0.0);
        }
    }

    #[test]
    fn batch_of_one_matches_row_inside_larger_batch() {
        let model = tiny_model(5);
        let (batch, _) = random_batch(&model, 8, 21);
        let pass8 = model.forward(&batch).unwrap();
        for col in 0..8 {
            let single = Batch {
                xs: batch
                    .xs
                    .iter()
                    .map(|x| DMatrix::from_column_slice(x.nrows(), 1, x.column(col).as_slice()))
                    .collect(),
            };
            let pass1 = model.forward(&single).unwrap();
            for t in 0..model.w {
                for row in 0..model.n_states() {
                    assert_abs_diff_eq!(
                        pass1.outputs[t][(row, 0)],
                        pass8.outputs[t][(row, col)],
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn loss_of_constant_error_is_that_constant() {
        let outputs = vec![DMatrix::from_element(4, 3, 0.1); 2];
        let targets = vec![DMatrix::from_element(4, 3, 0.0); 2];
        assert_abs_diff_eq!(loss(&outputs, &targets).unwrap(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(loss(&outputs, &outputs).unwrap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn loss_matches_two_pass_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let outputs: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(5, 4, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let targets: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(5, 4, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        // Brute-force recomputation with scalar loops.
        let mut sum = 0.0;
        let mut count = 0;
        for (y, t) in outputs.iter().zip(&targets) {
            for row in 0..5 {
                for col in 0..4 {
                    let d = y[(row, col)] - t[(row, col)];
                    sum += d * d;
                    count += 1;
                }
            }
        }
        let oracle = (sum / count as f64).sqrt();
        assert_abs_diff_eq!(loss(&outputs, &targets).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn zero_error_batch_has_zero_gradients() {
        let model = tiny_model(13);
        let (batch, _) = random_batch(&model, 2, 17);
        let pass = model.forward(&batch).unwrap();
        let targets = pass.outputs.clone();
        let grads = model.backward(&batch, &pass, &targets).unwrap();
        for g in grads.tensors() {
            assert_eq!(g.amax(), 0.0);
        }
    }

    #[test]
    fn duplicated_batch_has_same_gradient_as_single() {
        let model = tiny_model(19);
        let (batch, targets) = random_batch(&model, 1, 23);
        let pass = model.forward(&batch).unwrap();
        let g1 = model.backward(&batch, &pass, &targets).unwrap();

        let dup = Batch {
            xs: batch
                .xs
                .iter()
                .map(|x| {
                    let mut m = DMatrix::zeros(x.nrows(), 4);
                    for col in 0..4 {
                        m.set_column(col, &x.column(0));
                    }
                    m
                })
                .collect(),
        };
        let dup_targets: Vec<DMatrix<f64>> = targets
            .iter()
            .map(|x| {
                let mut m = DMatrix::zeros(x.nrows(), 4);
                for col in 0..4 {
                    m.set_column(col, &x.column(0));
                }
                m
            })
            .collect();
        let pass4 = model.forward(&dup).unwrap();
        let g4 = model.backward(&dup, &pass4, &dup_targets).unwrap();
        for (a, b) in g1.tensors().into_iter().zip(g4.tensors()) {
            let diff = (a - b).amax();
            assert!(diff < 1e-12, "gradient differs by {diff}");
        }
    }

    /// Sign pattern of every cell pre-activation; a sign flip between the
    /// two finite-difference evaluations means the relu output path is
    /// non-differentiable across the interval and the FD value is invalid.
    fn cell_signs(pass: &ForwardPass) -> Vec<bool> {
        [&pass.enc1, &pass.enc2, &pass.dec1]
            .iter()
            .flat_map(|cache| cache.cell.iter())
            .flat_map(|c| c.iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Central finite differences of the MSE objective for every tensor.
    /// Returns (max relative error, fraction of entries skipped at kinks).
    pub(super) fn finite_difference_check(
        model: &mut DaeModel,
        b: usize,
        data_seed: u64,
    ) -> (f64, f64) {
        let (batch, targets) = random_batch(model, b, data_seed);
        let pass = model.forward(&batch).unwrap();
        let grads = model.backward(&batch, &pass, &targets).unwrap();
        let analytic: Vec<DMatrix<f64>> = grads.tensors().into_iter().cloned().collect();

        let step = 1e-5;
        let mut worst: f64 = 0.0;
        let mut skipped = 0usize;
        let mut total = 0usize;
        for (ti, _) in analytic.iter().enumerate() {
            let (rows, cols) = analytic[ti].shape();
            for r in 0..rows {
                for c in 0..cols {
                    total += 1;
                    let original = model.tensors()[ti][(r, c)];
                    model.tensors_mut()[ti][(r, c)] = original + step;
                    let pass_plus = model.forward(&batch).unwrap();
                    let f_plus = mse(&pass_plus.outputs, &targets).unwrap();
                    model.tensors_mut()[ti][(r, c)] = original - step;
                    let pass_minus = model.forward(&batch).unwrap();
                    let f_minus = mse(&pass_minus.outputs, &targets).unwrap();
                    model.tensors_mut()[ti][(r, c)] = original;
                    if cell_signs(&pass_plus) != cell_signs(&pass_minus) {
                        skipped += 1;
                        continue;
                    }
                    let fd = (f_plus - f_minus) / (2.0 * step);
                    let a = analytic[ti][(r, c)];
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
        (worst, skipped as f64 / total as f64)
    }

    #[test]
    fn bptt_matches_finite_differences_tiny_model() {
        for seed in [0u64, 1, 2] {
            let mut model = tiny_model(seed);
            let (worst, skipped) = finite_difference_check(&mut model, 2, seed + 100);
            assert!(worst < 1e-4, "seed {seed}: max relative error {worst}");
            assert!(skipped < 0.02, "seed {seed}: {skipped} of entries at kinks");
        }
    }

    #[test]
    fn bptt_matches_finite_differences_tanh_variant() {
        let mut model = DaeModel::new(
            3,
            2,
            LayerSizes {
                enc1: 4,
                enc2: 3,
                dec1: 4,
            },
            CellActivation::Tanh,
            identity_normalizer(2),
            77,
        );
        let (worst, skipped) = finite_difference_check(&mut model, 2, 177);
        assert!(worst < 1e-4, "max relative error {worst}");
        // tanh has no kinks: nothing may be skipped.
        assert_eq!(skipped, 0.0);
    }

    #[test]
    fn correct_window_round_trips_normalization() {
        let n = 2;
        let normalizer = Normalizer {
            mean: vec![1.0, -0.5],
            std: vec![0.2, 2.0],
        };
        let mut model = DaeModel::new(
            3,
            n,
            LayerSizes {
                enc1: 4,
                enc2: 3,
                dec1: 4,
            },
            CellActivation::Relu,
            normalizer,
            5,
        );
        for t in model.tensors_mut() {
            t.fill(0.0);
        }
        // Zero weights emit zero in normalized space, i.e. the mean after
        // denormalization.
        let rows = vec![vec![1.3, 0.4]; 3];
        let out = model.correct_window(&rows).unwrap();
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], -0.5, epsilon = 1e-12);
    }
}
