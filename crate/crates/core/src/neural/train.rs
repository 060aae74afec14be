//! Minibatch training loop with Adam (or SGD), global-norm gradient
//! clipping, early stopping, and best-validation checkpointing. Fully
//! deterministic under a fixed seed with single-worker execution.

use super::{mse, Batch, DaeGrads, DaeModel, NeuralError};
use crate::dataset::{DatasetSplit, WindowSample};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    pub patience: usize,
    /// Per-epoch multiplicative learning-rate decay; 1.0 disables it.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            clip_norm: 5.0,
            patience: 0,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NeuralError> {
        if self.epochs == 0 {
            return Err(NeuralError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(NeuralError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(NeuralError::InvalidConfig(
                "lr_decay must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose validation loss was best.
    pub best_epoch: usize,
    pub best_val_rmse: f64,
}

struct Adam {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: usize,
}

impl Adam {
    fn new(model: &DaeModel) -> Self {
        let zeros: Vec<DMatrix<f64>> = model
            .tensors()
            .iter()
            .map(|p| DMatrix::zeros(p.nrows(), p.ncols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut DaeModel, grads: &[DMatrix<f64>], lr: f64) {
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for ((param, g), (m, v)) in model
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for idx in 0..g.len() {
                let gi = g[idx];
                m[idx] = BETA1 * m[idx] + (1.0 - BETA1) * gi;
                v[idx] = BETA2 * v[idx] + (1.0 - BETA2) * gi * gi;
                let m_hat = m[idx] / bc1;
                let v_hat = v[idx] / bc2;
                param[idx] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

fn sgd_step(model: &mut DaeModel, grads: &[DMatrix<f64>], lr: f64) {
    for (param, g) in model.tensors_mut().into_iter().zip(grads) {
        for idx in 0..g.len() {
            param[idx] -= lr * g[idx];
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `clip_norm`.
fn clip_global_norm(grads: &mut [DMatrix<f64>], clip_norm: f64) {
    if clip_norm <= 0.0 {
        return;
    }
    let norm: f64 = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for g in grads.iter_mut() {
            g.scale_mut(scale);
        }
    }
}

fn grads_to_tensors(grads: DaeGrads) -> Vec<DMatrix<f64>> {
    grads.tensors().into_iter().cloned().collect()
}

/// Full-set RMSE in normalized space.
pub fn evaluate_rmse(model: &DaeModel, samples: &[WindowSample]) -> Result<f64, NeuralError> {
    if samples.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let mut total_sq = 0.0;
    let mut total_count = 0usize;
    for chunk in samples.chunks(256) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let (batch, targets) = Batch::from_samples(&refs, &model.normalizer)?;
        let pass = model.forward(&batch)?;
        let batch_mse = mse(&pass.outputs, &targets)?;
        let count = chunk.len() * model.w * model.n_states();
        total_sq += batch_mse * count as f64;
        total_count += count;
    }
    Ok((total_sq / total_count as f64).sqrt())
}

/// Trains the model on the split's training set, monitoring validation
/// RMSE each epoch. Returns the per-epoch report; the model is left at
/// the best-validation checkpoint.
pub fn train(
    model: &mut DaeModel,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<TrainReport, NeuralError> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model);
    let mut indices: Vec<usize> = (0..split.train.len()).collect();

    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_rmse: f64::INFINITY,
    };
    let mut best_params: Vec<DMatrix<f64>> = model.tensors().into_iter().cloned().collect();
    let mut epochs_since_best = 0usize;

    let mut lr = cfg.learning_rate;
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        let mut epoch_sq = 0.0;
        let mut epoch_count = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let refs: Vec<&WindowSample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let (batch, targets) = Batch::from_samples(&refs, &model.normalizer)?;
            let pass = model.forward(&batch)?;
            let batch_mse = mse(&pass.outputs, &targets)?;
            if !batch_mse.is_finite() {
                restore(model, &best_params);
                return Err(NeuralError::Diverged { epoch });
            }
            let count = chunk.len() * model.w * model.n_states();
            epoch_sq += batch_mse * count as f64;
            epoch_count += count;

            let grads = model.backward(&batch, &pass, &targets)?;
            let mut tensors = grads_to_tensors(grads);
            clip_global_norm(&mut tensors, cfg.clip_norm);
            match cfg.optimizer {
                OptimizerKind::Adam => adam.step(model, &tensors, lr),
                OptimizerKind::Sgd => sgd_step(model, &tensors, lr),
            }
        }
        let train_rmse = (epoch_sq / epoch_count as f64).sqrt();
        let val_rmse = evaluate_rmse(model, &split.val)?;
        if !val_rmse.is_finite() {
            restore(model, &best_params);
            return Err(NeuralError::Diverged { epoch });
        }
        report.epochs.push(EpochStats {
            epoch,
            train_rmse,
            val_rmse,
        });
        lr *= cfg.lr_decay;
        if val_rmse < report.best_val_rmse {
            report.best_val_rmse = val_rmse;
            report.best_epoch = epoch;
            best_params = model.tensors().into_iter().cloned().collect();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if cfg.patience > 0 && epochs_since_best >= cfg.patience {
                break;
            }
        }
    }
    restore(model, &best_params);
    Ok(report)
}

fn restore(model: &mut DaeModel, params: &[DMatrix<f64>]) {
    for (dst, src) in model.tensors_mut().into_iter().zip(params) {
        dst.copy_from(src);
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CellActivation, LayerSizes};
    use super::*;
    use crate::dataset::Normalizer;

    fn memorization_split(n_samples: usize, w: usize, n: usize) -> DatasetSplit {
        // Smooth deterministic windows the model should overfit exactly.
        let make = |k: usize| {
            let phase = k as f64 * 0.37;
            let mut target = Vec::with_capacity(w * n);
            for t in 0..w {
                for s in 0..n {
                    target.push(0.15 * ((phase + 0.45 * t as f64 + 1.3 * s as f64).sin()));
                }
            }
            WindowSample {
                inputs: target.clone(),
                target,
                attack_mask: vec![true; n],
                meta: k,
            }
        };
        DatasetSplit {
            train: (0..n_samples).map(make).collect(),
            val: (0..2).map(|k| make(k + n_samples)).collect(),
            test: (0..2).map(|k| make(k + n_samples + 2)).collect(),
            fractions: (0.6, 0.2, 0.2),
        }
    }

    fn identity_normalizer(n: usize) -> Normalizer {
        Normalizer {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    #[test]
    fn memorization_run_reaches_small_train_rmse() {
        let (w, n) = (3, 4);
        let split = memorization_split(10, w, n);
        let mut model = DaeModel::new(
            w,
            n,
            LayerSizes {
                enc1: 64,
                enc2: 32,
                dec1: 64,
            },
            CellActivation::Relu,
            identity_normalizer(n),
            7,
        );
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 10,
            learning_rate: 2e-2,
            optimizer: OptimizerKind::Adam,
            seed: 7,
            clip_norm: 5.0,
            patience: 0,
            lr_decay: 0.994,
        };
        let report = train(&mut model, &split, &cfg).unwrap();
        let final_train = report.epochs.last().unwrap().train_rmse;
        assert!(
            final_train < 1e-3,
            "memorization failed: train RMSE {final_train}"
        );
        // Loss is monotone-ish after warmup on this run: compare start/end.
        assert!(report.epochs[0].train_rmse > final_train * 10.0);
    }

    #[test]
    fn fixed_seed_reproduces_epoch_one_loss_bitwise() {
        let (w, n) = (3, 4);
        let split = memorization_split(10, w, n);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 99,
            clip_norm: 5.0,
            patience: 0,
            lr_decay: 1.0,
        };
        let run = || {
            let mut model = DaeModel::new(
                w,
                n,
                LayerSizes {
                    enc1: 8,
                    enc2: 4,
                    dec1: 8,
                },
                CellActivation::Relu,
                identity_normalizer(n),
                42,
            );
            train(&mut model, &split, &cfg).unwrap().epochs[0].train_rmse
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn rejects_invalid_configs() {
        let split = memorization_split(10, 3, 4);
        let mut model = DaeModel::new(
            3,
            4,
            LayerSizes {
                enc1: 4,
                enc2: 3,
                dec1: 4,
            },
            CellActivation::Relu,
            identity_normalizer(4),
            1,
        );
        for bad in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                train(&mut model, &split, &bad),
                Err(NeuralError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn early_stopping_restores_best_checkpoint() {
        let (w, n) = (3, 4);
        let split = memorization_split(10, w, n);
        let mut model = DaeModel::new(
            w,
            n,
            LayerSizes {
                enc1: 8,
                enc2: 4,
                dec1: 8,
            },
            CellActivation::Relu,
            identity_normalizer(n),
            3,
        );
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 10,
            learning_rate: 3e-3,
            optimizer: OptimizerKind::Adam,
            seed: 3,
            clip_norm: 5.0,
            patience: 5,
            lr_decay: 1.0,
        };
        let report = train(&mut model, &split, &cfg).unwrap();
        let val_now = evaluate_rmse(&model, &split.val).unwrap();
        assert!((val_now - report.best_val_rmse).abs() < 1e-12);
    }
}

