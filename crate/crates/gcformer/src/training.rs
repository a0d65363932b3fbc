//! Losses, a from-scratch Adam optimizer, and the deterministic training
//! loop with validation-based model selection.
//!
//! Determinism: batch order comes from a seeded shuffle, batch gradients are
//! averaged in index order, and the best-validation parameters are kept as a
//! plain copy, so identical (seed, config, data) reproduce bit-identical
//! trajectories.

use std::fmt::Write as _;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowedDataset;
use crate::error::{GcError, Result};
use crate::model::GcformerModel;

/// Mean squared error over all elements.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(GcError::invalid("mse needs equal, non-empty shapes"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Mean absolute error over all elements.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(GcError::invalid("mae needs equal, non-empty shapes"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Adam accumulators aligned with a parameter enumeration.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize], lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Maximum global gradient norm before clipping.
pub const GRAD_CLIP_NORM: f64 = 5.0;

/// One bias-corrected Adam update in place; gradients are clipped to
/// [`GRAD_CLIP_NORM`] global norm first.
pub fn adam_step(state: &mut AdamState, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(GcError::invalid("adam_step enumeration mismatch"));
    }
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(GcError::numeric("non-finite gradient in adam_step"));
    }
    let norm: f64 = grads
        .iter()
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    let clip = if norm > GRAD_CLIP_NORM {
        GRAD_CLIP_NORM / norm
    } else {
        1.0
    };
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for i in 0..params.len() {
        if params[i].len() != grads[i].len() {
            return Err(GcError::invalid("adam_step shape mismatch"));
        }
        for j in 0..params[i].len() {
            let g = grads[i][j] * clip;
            let m = &mut state.first_moment[i][j];
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            let v = &mut state.second_moment[i][j];
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            params[i][j] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 5e-4,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub test_mse: f64,
    pub test_mae: f64,
    pub seed: u64,
}

impl TrainReport {
    /// CSV rows (epoch, train_loss, val_loss) plus a summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for (i, e) in self.epochs.iter().enumerate() {
            let _ = writeln!(out, "{i},{:.12},{:.12}", e.train_loss, e.val_loss);
        }
        let _ = writeln!(
            out,
            "summary,best_epoch={},test_mse={:.12},test_mae={:.12},seed={}",
            self.best_epoch, self.test_mse, self.test_mae, self.seed
        );
        out
    }
}

/// Average MSE/MAE of the model over a windowed dataset.
pub fn evaluate(model: &GcformerModel, dataset: &WindowedDataset) -> Result<(f64, f64)> {
    if dataset.samples.is_empty() {
        return Err(GcError::invalid("cannot evaluate on an empty dataset"));
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut count = 0usize;
    for sample in &dataset.samples {
        let pred = model.forward(&sample.input)?;
        for (pr, tr) in pred.iter().zip(&sample.target) {
            for (p, t) in pr.iter().zip(tr) {
                se += (p - t) * (p - t);
                ae += (p - t).abs();
                count += 1;
            }
        }
    }
    Ok((se / count as f64, ae / count as f64))
}

/// Mean training-objective loss (forward only) over a dataset.
fn dataset_loss(model: &GcformerModel, dataset: &WindowedDataset) -> Result<f64> {
    let mut total = 0.0;
    for sample in &dataset.samples {
        let pass = model.build_forward(&sample.input, Some(&sample.target))?;
        total += pass.tape.value(pass.loss.expect("target supplied"))[0];
    }
    Ok(total / dataset.samples.len() as f64)
}

/// Deterministic mini-batch training with early stopping; returns the
/// parameters with the lowest validation loss and that checkpoint's test
/// metrics.
pub fn train(
    model: &GcformerModel,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    test_set: &WindowedDataset,
    config: &TrainConfig,
) -> Result<(GcformerModel, TrainReport)> {
    if train_set.samples.is_empty() || val_set.samples.is_empty() || test_set.samples.is_empty() {
        return Err(GcError::invalid("train/val/test splits must be non-empty"));
    }
    if config.epochs < 1 || config.batch_size < 1 {
        return Err(GcError::invalid("epochs and batch_size must be >= 1"));
    }
    let mut current = model.clone();
    let shapes: Vec<usize> = current.params.iter().map(|p| p.values.len()).collect();
    let mut adam = AdamState::new(&shapes, config.learning_rate);

    let mut best_params: Vec<Vec<f64>> = current.params.iter().map(|p| p.values.clone()).collect();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut epochs = Vec::new();
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64 + 1));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut batch_grads: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let sample = &train_set.samples[idx];
                let (loss, grads) = current.loss_and_gradients(&sample.input, &sample.target)?;
                batch_loss += loss;
                for (acc, g) in batch_grads.iter_mut().zip(&grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in batch_grads.iter_mut().flatten() {
                *g *= scale;
            }
            let mut values: Vec<Vec<f64>> =
                current.params.iter().map(|p| p.values.clone()).collect();
            adam_step(&mut adam, &mut values, &batch_grads)?;
            for (p, v) in current.params.iter_mut().zip(values) {
                p.values = v;
            }
            epoch_loss += batch_loss / batch.len() as f64;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        let val_loss = dataset_loss(&current, val_set)?;
        epochs.push(EpochStats {
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = current.params.iter().map(|p| p.values.clone()).collect();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let mut best_model = current;
    for (p, v) in best_model.params.iter_mut().zip(best_params) {
        p.values = v;
    }
    let (test_mse, test_mae) = evaluate(&best_model, test_set)?;
    let report = TrainReport {
        epochs,
        best_epoch,
        test_mse,
        test_mae,
        seed: config.seed,
    };
    Ok((best_model, report))
}
