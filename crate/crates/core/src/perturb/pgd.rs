use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use super::{clip_project, AdversarialSample, NodeIndicator, PerturbBudget};
use crate::datakit::SampleWindow;
use crate::error::{Error, Result};
use crate::forecaster::{per_sample_loss, target_matrix, Forecaster, Objective};
use crate::seeding;

/// Anything PGD can attack: per-sample objective values and input gradients,
/// with targets in the `horizon x (batch * n)` layout.
pub trait AttackTarget: Sync {
    fn input_gradients(&self, xs: &[&Array3<f64>], target: &Array2<f64>, objective: Objective<'_>) -> Result<(Vec<Array3<f64>>, Vec<f64>)>;
    fn objective_values(&self, xs: &[&Array3<f64>], target: &Array2<f64>, objective: Objective<'_>) -> Result<Vec<f64>>;
}

impl AttackTarget for Forecaster {
    fn input_gradients(&self, xs: &[&Array3<f64>], target: &Array2<f64>, objective: Objective<'_>) -> Result<(Vec<Array3<f64>>, Vec<f64>)> {
        Forecaster::input_gradients(self, xs, target, objective)
    }

    fn objective_values(&self, xs: &[&Array3<f64>], target: &Array2<f64>, objective: Objective<'_>) -> Result<Vec<f64>> {
        let pred = self.predict_matrix(xs)?;
        Ok(per_sample_loss(&pred, target, objective, self.nodes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Start from a uniform draw inside the ball on the selected nodes.
    #[default]
    Uniform,
    /// Start from the clean input.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutput {
    pub x_adv: Array3<f64>,
    /// Objective at `x_adv`; the maximum over every visited iterate.
    pub loss: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn initial_point(x: &Array3<f64>, mask: &[bool], eps: f64, init: InitMode, seed: u64) -> Result<Array3<f64>> {
    match init {
        InitMode::Zero => Ok(x.clone()),
        InitMode::Uniform => {
            let delta = super::sample_uniform_delta(x.dim(), eps, seed)?;
            let mut cand = x.clone();
            Zip::indexed(&mut cand).and(&delta).for_each(|(_, i, _), v, &d| {
                if mask[i] {
                    *v += d;
                }
            });
            Ok(clip_project(&cand, x, eps))
        }
    }
}

/// Batched sign-gradient ascent with projection and keep-best.
///
/// Each sample `k` is perturbed only on `indicators[k]` and its random start is
/// drawn from a stream keyed by `(seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn pgd_attack_batch<M: AttackTarget + ?Sized>(
    model: &M,
    xs: &[&Array3<f64>],
    target: &Array2<f64>,
    indicators: &[NodeIndicator],
    budget: &PerturbBudget,
    objective: Objective<'_>,
    init: InitMode,
    seed: u64,
) -> Result<Vec<PgdOutput>> {
    if xs.len() != indicators.len() {
        return Err(Error::Contract(format!("{} inputs but {} indicators", xs.len(), indicators.len())));
    }
    let masks: Vec<Vec<bool>> = indicators.iter().map(NodeIndicator::mask).collect();
    for (x, m) in xs.iter().zip(&masks) {
        if x.dim().1 != m.len() {
            return Err(Error::Contract(format!("indicator covers {} nodes, input has {}", m.len(), x.dim().1)));
        }
    }
    let eps = budget.epsilon;
    let mut current = xs
        .iter()
        .zip(&masks)
        .enumerate()
        .map(|(k, (x, m))| initial_point(x, m, eps, init, seeding::derive_n(seed, "pgd-init", k as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Vec<Option<PgdOutput>> = vec![None; xs.len()];
    let keep = |best: &mut Vec<Option<PgdOutput>>, current: &[Array3<f64>], losses: &[f64]| {
        for (k, &l) in losses.iter().enumerate() {
            let better = match &best[k] {
                None => true,
                Some(b) => l > b.loss,
            };
            if better {
                best[k] = Some(PgdOutput { x_adv: current[k].clone(), loss: l });
            }
        }
    };
    for iteration in 0..budget.steps {
        let refs: Vec<&Array3<f64>> = current.iter().collect();
        let (grads, losses) = model.input_gradients(&refs, target, objective)?;
        keep(&mut best, &current, &losses);
        for (k, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Attack { iteration, message: format!("non-finite input gradient for sample {k}") });
            }
            let mut cand = current[k].clone();
            Zip::indexed(&mut cand).and(g).for_each(|(_, i, _), v, &gv| {
                if masks[k][i] {
                    *v += budget.gamma * sign(gv);
                }
            });
            current[k] = clip_project(&cand, xs[k], eps);
        }
    }
    let refs: Vec<&Array3<f64>> = current.iter().collect();
    let losses = model.objective_values(&refs, target, objective)?;
    keep(&mut best, &current, &losses);
    Ok(best.into_iter().map(|b| b.expect("at least one iterate is scored")).collect())
}

/// PGD on a single window.
#[allow(clippy::too_many_arguments)]
pub fn pgd_attack<M: AttackTarget + ?Sized>(
    model: &M,
    window: &SampleWindow,
    indicator: &NodeIndicator,
    budget: &PerturbBudget,
    objective: Objective<'_>,
    init: InitMode,
    seed: u64,
    tag: &str,
) -> Result<AdversarialSample> {
    let target = target_matrix(&[&window.y]);
    let out = pgd_attack_batch(model, &[&window.x], &target, std::slice::from_ref(indicator), budget, objective, init, seed)?
        .remove(0);
    Ok(AdversarialSample {
        x_adv: out.x_adv,
        base: window.t_origin,
        indicator: indicator.clone(),
        budget: budget.clone(),
        attack_tag: tag.to_string(),
        loss: out.loss,
    })
}
