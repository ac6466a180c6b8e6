//! Clean (non-adversarial) training with early stopping on validation MAE.

use log::info;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{mae_metric, rmse_metric, target_matrix, Forecaster, Objective};
use crate::datakit::SampleWindow;
use crate::error::{Error, Result};
use crate::params::{Adam, AdamConfig};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    /// Cap on optimiser steps per epoch; `None` sweeps the whole training split.
    pub batches_per_epoch: Option<usize>,
    /// Cap on validation windows scored per epoch (evenly spaced); `None` scores all.
    pub eval_max_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, patience: 5, adam: AdamConfig::default(), batches_per_epoch: None, eval_max_windows: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, if any epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_mae: f64,
}

/// Evenly spaced subset of at most `max` windows, always including the first.
pub fn subsample(windows: &[SampleWindow], max: Option<usize>) -> Vec<&SampleWindow> {
    match max {
        Some(m) if m > 0 && m < windows.len() => (0..m).map(|k| &windows[k * windows.len() / m]).collect(),
        _ => windows.iter().collect(),
    }
}

/// Normalised-unit MAE and RMSE of `model` over the given inputs and targets.
pub fn evaluate_inputs(model: &Forecaster, xs: &[&Array3<f64>], ys: &[&Array3<f64>]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::Contract("evaluation over zero windows".into()));
    }
    let pred = model.predict_matrix(xs)?;
    let target = target_matrix(ys);
    Ok((mae_metric(&pred, &target)?, rmse_metric(&pred, &target)?))
}

pub fn evaluate_windows(model: &Forecaster, windows: &[&SampleWindow]) -> Result<(f64, f64)> {
    let xs: Vec<_> = windows.iter().map(|w| &w.x).collect();
    let ys: Vec<_> = windows.iter().map(|w| &w.y).collect();
    evaluate_inputs(model, &xs, &ys)
}

/// Shuffled mini-batches of window indices for one epoch.
pub(crate) fn epoch_batches(len: usize, batch_size: usize, cap: Option<usize>, rng: &mut seeding::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if let Some(c) = cap {
        batches.truncate(c);
    }
    batches
}

/// Adam on the clean MSE. Keeps the parameters of the best validation epoch.
pub fn train_clean(
    model: &mut Forecaster,
    train: &[SampleWindow],
    val: &[SampleWindow],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("training needs non-empty train and validation splits".into()));
    }
    let mut rng = seeding::rng(seeding::derive(seed, "train-clean"));
    let mut adam = Adam::new(cfg.adam, &model.params);
    let val_set = subsample(val, cfg.eval_max_windows);
    let mut best = (None, f64::INFINITY, model.params.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.batches_per_epoch, &mut rng);
        let mut total = 0.0;
        for idx in &batches {
            let xs: Vec<_> = idx.iter().map(|&i| &train[i].x).collect();
            let ys: Vec<_> = idx.iter().map(|&i| &train[i].y).collect();
            let target: Array2<f64> = target_matrix(&ys);
            let (loss, grads) = model.loss_and_grads(&xs, &target, Objective::Mse)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("non-finite loss {loss}") });
            }
            adam.step(&mut model.params, &grads);
            total += loss;
        }
        if !model.params.all_finite() {
            return Err(Error::Training { epoch, message: "parameters diverged".into() });
        }
        let (val_mae, _) = evaluate_windows(model, &val_set)?;
        let train_loss = total / batches.len().max(1) as f64;
        info!("epoch {epoch}: train mse {train_loss:.6}, val mae {val_mae:.6}");
        history.push(EpochRecord { epoch, train_loss, val_mae });
        if val_mae < best.1 {
            best = (Some(epoch), val_mae, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    if best.0.is_some() {
        model.params = best.2;
    }
    Ok(TrainOutcome { history, best_epoch: best.0, best_val_mae: best.1 })
}
