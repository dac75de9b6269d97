//! Mean-absolute-error training loop with ADAM, seeded per-epoch shuffling,
//! per-epoch validation, and best-validation checkpoint retention.

use crate::data::Sample;
use crate::models::Model;
use crate::numerics::{AdamParams, AdamState, Graph, Rng, Tape, Tensor};

use super::PipelineError;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub seed: u64,
    /// Validate every this many epochs (the last epoch always validates).
    pub val_every: usize,
}

impl TrainConfig {
    /// Paper-scale schedule.
    pub fn full() -> TrainConfig {
        TrainConfig { epochs: 50, batch_size: 12, lr: 1e-5, beta1: 0.9, beta2: 0.999, seed: 0, val_every: 1 }
    }

    /// Desk-scale schedule: fewer epochs, larger step for 64×64 phantoms.
    pub fn desk() -> TrainConfig {
        TrainConfig { epochs: 20, lr: 1e-3, ..TrainConfig::full() }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs == 0 || self.batch_size == 0 || self.val_every == 0 {
            return Err(PipelineError::Config(format!(
                "epochs ({}), batch_size ({}) and val_every ({}) must all be ≥ 1",
                self.epochs, self.batch_size, self.val_every
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mae: f64,
    /// NaN on epochs where validation was skipped by the cadence.
    pub val_mae: f64,
}

pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// Last-epoch parameters in store order (the model itself is left
    /// holding the best-validation parameters).
    pub final_params: Vec<Tensor>,
}

impl TrainReport {
    /// `epoch,train_mae,val_mae` rows; skipped validations are blank.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_mae,val_mae\n");
        for s in &self.history {
            let val = if s.val_mae.is_nan() { String::new() } else { format!("{:.8}", s.val_mae) };
            out.push_str(&format!("{},{:.8},{}\n", s.epoch, s.train_mae, val));
        }
        out
    }
}

fn batch_tensor(set: &[Sample], indices: &[usize], side: usize) -> Result<Tensor, PipelineError> {
    let px = side * side;
    let mut data = Vec::with_capacity(indices.len() * px);
    for &i in indices {
        if set[i].image.shape() != [side, side, 1] {
            return Err(PipelineError::Shape(format!(
                "sample {i} is {:?}, model wants [{side}, {side}, 1]",
                set[i].image.shape()
            )));
        }
        data.extend_from_slice(set[i].image.data());
    }
    Ok(Tensor::new(vec![indices.len(), side, side, 1], data)?)
}

/// Mean |x − x̂| over a whole set, computed without gradients.
fn validation_mae(model: &Model, set: &[Sample], batch: usize) -> Result<f64, PipelineError> {
    let side = model.config.image;
    let mut abs_sum = 0.0f64;
    let mut px_count = 0.0f64;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch) {
        let x = batch_tensor(set, chunk, side)?;
        let y = model.infer(&x)?;
        for (a, b) in x.data().iter().zip(y.data()) {
            abs_sum += (a - b).abs() as f64;
        }
        px_count += x.numel() as f64;
    }
    Ok(abs_sum / px_count)
}

/// Minimizes mean absolute reconstruction error with ADAM. Shuffles with a
/// generator keyed off `cfg.seed` and the epoch index, validates per the
/// cadence, and leaves the model holding the parameters of the epoch with
/// the lowest validation MAE. Non-finite losses abort with their position.
pub fn train(
    model: &mut Model,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport, PipelineError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let side = model.config.image;
    let sizes: Vec<usize> = model.store.iter().map(|(_, t)| t.numel()).collect();
    let shapes: Vec<Vec<usize>> = model.store.iter().map(|(_, t)| t.shape().to_vec()).collect();
    let mut adam = AdamState::new(
        AdamParams { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: 1e-8 },
        &sizes,
    );
    let shuffler = Rng::new(cfg.seed).split("shuffle");

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        shuffler.split_index(epoch as u64).shuffle(&mut order);

        let mut abs_sum = 0.0f64;
        let mut px_count = 0.0f64;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true)?;
            let xt = batch_tensor(train_set, chunk, side)?;
            let x = tape.constant(xt)?;
            let y = model.forward_on(&mut tape, &bound, &x)?;
            let loss = tape.mae(&x, &y)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() {
                return Err(PipelineError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            let px = (chunk.len() * side * side) as f64;
            abs_sum += loss_val as f64 * px;
            px_count += px;

            let ids: Vec<_> = bound.values().to_vec();
            let mut grads = tape.backward(loss)?;
            let mut grad_tensors = Vec::with_capacity(ids.len());
            for (id, shape) in ids.iter().zip(&shapes) {
                grad_tensors.push(grads.take(*id, shape)?);
            }
            adam.step(model.store.tensors_mut(), &grad_tensors)?;
        }
        let train_mae = abs_sum / px_count;

        let validate_now = (epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.epochs;
        let val_mae = if validate_now {
            let v = validation_mae(model, val_set, cfg.batch_size)?;
            if !v.is_finite() {
                return Err(PipelineError::NonFiniteValidation { epoch });
            }
            if best.as_ref().is_none_or(|(_, b, _)| v < *b) {
                let snapshot = model.store.iter().map(|(_, t)| t.clone()).collect();
                best = Some((epoch, v, snapshot));
            }
            v
        } else {
            f64::NAN
        };
        history.push(EpochStats { epoch, train_mae, val_mae });
    }

    let (best_epoch, best_val_mae, snapshot) = best.expect("final epoch always validates");
    let final_params: Vec<Tensor> = model.store.iter().map(|(_, t)| t.clone()).collect();
    for (slot, saved) in model.store.tensors_mut().iter_mut().zip(snapshot) {
        *slot = saved;
    }
    Ok(TrainReport { history, best_epoch, best_val_mae, final_params })
}
