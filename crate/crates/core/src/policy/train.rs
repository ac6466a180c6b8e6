//! REINFORCE updates and the alternating policy/model training loop.

use std::path::Path;

use log::info;
use ndarray::Array3;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{evaluate_costs, DecodeMode, NodeSolution, PolicyNet};
use crate::datakit::{SampleWindow, TrafficGraph};
use crate::error::{Error, Result};
use crate::forecaster::{target_matrix, Forecaster, Objective};
use crate::params::{Adam, AdamConfig};
use crate::perturb::{make_indicator, pgd_attack_batch, select_batch, InitMode, PerturbBudget, Strategy};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyTrainConfig {
    pub epochs: usize,
    /// Policy updates per epoch.
    pub inner_iters: usize,
    /// Constant added to every reward in the surrogate.
    pub reward_offset: f64,
    pub adam: AdamConfig,
    /// Selector whose cost the policy must beat.
    pub baseline: Strategy,
    pub batch_size: usize,
    /// Take one adversarial forecaster step at the end of every epoch.
    pub update_model: bool,
    pub model_adam: AdamConfig,
    /// Reuse one perturbation draw for every cost evaluation.
    pub fixed_delta_seed: Option<u64>,
    /// Divide each batch's rewards by their root mean square before the update.
    /// Raw rewards are MSE differences of order 1e-3, small enough for the
    /// optimiser's epsilon to swallow the step.
    pub normalize_rewards: bool,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            inner_iters: 30,
            reward_offset: 0.0,
            adam: AdamConfig::default(),
            baseline: Strategy::Tnds,
            batch_size: 16,
            update_model: true,
            model_adam: AdamConfig::default(),
            fixed_delta_seed: None,
            normalize_rewards: true,
        }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.inner_iters == 0 || self.batch_size == 0 {
            return Err(Error::Config("policy training needs epochs, inner_iters and batch_size >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iter: usize,
    pub reward_mean: f64,
    pub surrogate: f64,
    /// Forecaster loss of the model step that closed this epoch.
    pub model_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyTrainLog {
    pub records: Vec<IterationRecord>,
    pub policy_steps: usize,
    pub model_steps: usize,
}

impl PolicyTrainLog {
    pub fn epoch_mean_reward(&self, epoch: usize) -> Option<f64> {
        let r: Vec<f64> = self.records.iter().filter(|r| r.epoch == epoch).map(|r| r.reward_mean).collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        w.write_record(["epoch", "iter", "reward_mean", "surrogate", "model_loss"])?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.iter.to_string(),
                format!("{:.9}", r.reward_mean),
                format!("{:.9}", r.surrogate),
                r.model_loss.map(|v| format!("{v:.9}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One optimiser step on `-mean((r + c) * logprob)`. Returns the surrogate value.
pub fn reinforce_update(
    policy: &mut PolicyNet,
    adam: &mut Adam,
    xs: &[&Array3<f64>],
    solutions: &[NodeSolution],
    rewards: &[f64],
    offset: f64,
) -> Result<f64> {
    let b = xs.len() as f64;
    let weights: Vec<f64> = rewards.iter().map(|r| -(r + offset) / b).collect();
    let (surrogate, grads) = policy.weighted_logprob_grads(xs, solutions, &weights)?;
    if !surrogate.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training { epoch: 0, message: format!("non-finite policy surrogate {surrogate}") });
    }
    adam.step(&mut policy.params, &grads);
    Ok(surrogate)
}

/// `rewards / sqrt(mean(rewards^2))`; all-zero rewards stay zero.
pub fn rms_scaled(rewards: &[f64]) -> Vec<f64> {
    let rms = (rewards.iter().map(|r| r * r).sum::<f64>() / rewards.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        rewards.iter().map(|r| r / rms).collect()
    } else {
        rewards.to_vec()
    }
}

fn draw_batch<'a>(windows: &'a [SampleWindow], size: usize, rng: &mut seeding::Rng) -> Vec<&'a SampleWindow> {
    (0..size).map(|_| &windows[rng.random_range(0..windows.len())]).collect()
}

/// Alternates `inner_iters` policy updates against the baseline selector with
/// one adversarial forecaster update per epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_policy(
    policy: &mut PolicyNet,
    model: &mut Forecaster,
    graph: &TrafficGraph,
    train: &[SampleWindow],
    cfg: &PolicyTrainConfig,
    budget: &PerturbBudget,
    seed: u64,
) -> Result<PolicyTrainLog> {
    cfg.validate()?;
    budget.validate(policy.nodes)?;
    if train.is_empty() {
        return Err(Error::Contract("policy training needs training windows".into()));
    }
    let mut rng = seeding::rng(seeding::derive(seed, "policy-batches"));
    let mut policy_adam = Adam::new(cfg.adam, &policy.params);
    let mut model_adam = Adam::new(cfg.model_adam, &model.params);
    let mut log = PolicyTrainLog::default();
    let mut counter = 0u64;
    for epoch in 0..cfg.epochs {
        for iter in 0..cfg.inner_iters {
            let batch = draw_batch(train, cfg.batch_size, &mut rng);
            let xs: Vec<&Array3<f64>> = batch.iter().map(|w| &w.x).collect();
            let target = target_matrix(&batch.iter().map(|w| &w.y).collect::<Vec<_>>());
            let step_seed = seeding::derive_n(seed, "policy-step", counter);
            let solutions = policy.sample_batch(&xs, budget.eta, DecodeMode::Sampled, step_seed)?;
            let baseline = select_batch(cfg.baseline, graph, model, &xs, &target, budget.eta, seeding::derive(step_seed, "baseline"))?;
            let seeds: Vec<u64> = (0..xs.len())
                .map(|k| cfg.fixed_delta_seed.unwrap_or_else(|| seeding::derive_n(step_seed, "shared-delta", k as u64)))
                .collect();
            let mut omegas: Vec<&[usize]> = solutions.iter().map(|s| s.omega.as_slice()).collect();
            omegas.extend(baseline.iter().map(Vec::as_slice));
            let mut all_xs = xs.clone();
            all_xs.extend(xs.iter().copied());
            let mut all_seeds = seeds.clone();
            all_seeds.extend(&seeds);
            let both_targets = ndarray::concatenate(ndarray::Axis(1), &[target.view(), target.view()]).expect("same rows");
            let costs = evaluate_costs(model, &all_xs, &both_targets, &omegas, budget.epsilon, &all_seeds)?;
            let (cp, cb) = costs.split_at(xs.len());
            let rewards: Vec<f64> = cp.iter().zip(cb).map(|(p, b)| p - b).collect();
            let scaled = if cfg.normalize_rewards { rms_scaled(&rewards) } else { rewards.clone() };
            let surrogate = reinforce_update(policy, &mut policy_adam, &xs, &solutions, &scaled, cfg.reward_offset)
                .map_err(|e| match e {
                    Error::Training { message, .. } => Error::Training { epoch, message: format!("iteration {iter}: {message}") },
                    other => other,
                })?;
            log.policy_steps += 1;
            let reward_mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            log.records.push(IterationRecord { epoch, iter, reward_mean, surrogate, model_loss: None });
            counter += 1;
        }
        if cfg.update_model {
            let batch = draw_batch(train, cfg.batch_size, &mut rng);
            let xs: Vec<&Array3<f64>> = batch.iter().map(|w| &w.x).collect();
            let target = target_matrix(&batch.iter().map(|w| &w.y).collect::<Vec<_>>());
            let epoch_seed = seeding::derive_n(seed, "policy-model-step", epoch as u64);
            let chosen = policy.sample_batch(&xs, budget.eta, DecodeMode::Greedy, epoch_seed)?;
            let indicators = chosen.iter().map(|s| make_indicator(&s.omega, policy.nodes)).collect::<Result<Vec<_>>>()?;
            let adv = pgd_attack_batch(&*model, &xs, &target, &indicators, budget, Objective::Mse, InitMode::Uniform, epoch_seed)?;
            let adv_refs: Vec<&Array3<f64>> = adv.iter().map(|a| &a.x_adv).collect();
            let (loss, grads) = model.loss_and_grads(&adv_refs, &target, Objective::Mse)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("non-finite forecaster loss {loss}") });
            }
            model_adam.step(&mut model.params, &grads);
            log.model_steps += 1;
            if let Some(last) = log.records.last_mut() {
                last.model_loss = Some(loss);
            }
        }
        info!("policy epoch {epoch}: mean reward {:.6}", log.epoch_mean_reward(epoch).unwrap_or(f64::NAN));
    }
    Ok(log)
}
