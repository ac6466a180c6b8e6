//! Perturbation cost of a node set and the paired (balanced) reward.

use ndarray::{Array2, Array3};

use crate::datakit::SampleWindow;
use crate::error::{Error, Result};
use crate::forecaster::{per_sample_loss, target_matrix, Forecaster, Objective};
use crate::perturb::{apply_delta, make_indicator, sample_uniform_delta};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardRecord {
    pub cost_policy: f64,
    pub cost_baseline: f64,
    /// `cost_policy - cost_baseline`.
    pub reward: f64,
    pub shared_delta_seed: u64,
}

/// MSE of the model on `x + delta * I(omega)` for every sample, with `delta`
/// drawn from `seeds[k]`.
pub fn evaluate_costs(
    model: &Forecaster,
    xs: &[&Array3<f64>],
    target: &Array2<f64>,
    omegas: &[&[usize]],
    epsilon: f64,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    if xs.len() != omegas.len() || xs.len() != seeds.len() {
        return Err(Error::Contract("cost batch, node sets and seeds must align".into()));
    }
    let perturbed = xs
        .iter()
        .zip(omegas)
        .zip(seeds)
        .map(|((x, omega), &seed)| {
            let delta = sample_uniform_delta(x.dim(), epsilon, seed)?;
            apply_delta(x, &delta, &make_indicator(omega, x.dim().1)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Array3<f64>> = perturbed.iter().collect();
    let pred = model.predict_matrix(&refs)?;
    Ok(per_sample_loss(&pred, target, Objective::Mse, model.nodes))
}

pub fn evaluate_cost(model: &Forecaster, window: &SampleWindow, omega: &[usize], epsilon: f64, shared_seed: u64) -> Result<f64> {
    let target = target_matrix(&[&window.y]);
    Ok(evaluate_costs(model, &[&window.x], &target, &[omega], epsilon, &[shared_seed])?[0])
}

/// Policy cost minus baseline cost under one shared perturbation draw.
pub fn balanced_reward(
    model: &Forecaster,
    window: &SampleWindow,
    policy_omega: &[usize],
    baseline_omega: &[usize],
    epsilon: f64,
    shared_seed: u64,
) -> Result<RewardRecord> {
    let target = target_matrix(&[&window.y, &window.y]);
    let costs = evaluate_costs(model, &[&window.x, &window.x], &target, &[policy_omega, baseline_omega], epsilon, &[shared_seed, shared_seed])?;
    Ok(RewardRecord { cost_policy: costs[0], cost_baseline: costs[1], reward: costs[0] - costs[1], shared_delta_seed: shared_seed })
}
