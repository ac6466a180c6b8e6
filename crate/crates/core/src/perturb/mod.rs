//! Threat model: node-masked L-infinity perturbations, PGD, and node selectors.
//!
//! Inputs live in normalised units. A perturbed value must stay within `epsilon`
//! of the clean value and inside `[0, 1]`; when the clean value itself lies
//! outside `[0, 1]` (possible on held-out data) the data-range bound is relaxed
//! just enough to keep the clean value admissible.

mod dump;
mod pgd;
mod select;

pub use dump::{write_attack_csv, AttackRecord};
pub use pgd::{pgd_attack, pgd_attack_batch, AttackTarget, InitMode, PgdOutput};
pub use select::{random_subset, saliency_scores, select_batch, select_static, select_tnds, select_tnds_batch, top_k, Strategy};

use ndarray::Array3;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datakit::{SampleWindow, TrafficGraph};
use crate::error::{Error, Result};
use crate::forecaster::{target_matrix, Forecaster, Objective};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbBudget {
    /// L-infinity radius in normalised units.
    pub epsilon: f64,
    /// Number of adversarial nodes.
    pub eta: usize,
    pub steps: usize,
    /// PGD step size.
    pub gamma: f64,
}

impl Default for PerturbBudget {
    fn default() -> Self {
        Self { epsilon: 0.5, eta: 1, steps: 5, gamma: 0.1 }
    }
}

impl PerturbBudget {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.eta == 0 || self.eta > n {
            return Err(Error::Parameter(format!("eta must lie in [1, {n}], got {}", self.eta)));
        }
        if self.steps == 0 {
            return Err(Error::Parameter("PGD needs at least one step".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn with_eta(&self, eta: usize) -> Self {
        Self { eta, ..self.clone() }
    }
}

/// `ceil(fraction * n)`, at least 1 and at most `n`.
pub fn nodes_for_fraction(fraction: f64, n: usize) -> usize {
    // Subtracting a hair keeps exact products like 0.1 * 20 from rounding up.
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Diagonal binary node mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeIndicator {
    pub selected: Vec<usize>,
    pub n: usize,
}

pub fn make_indicator(omega: &[usize], n: usize) -> Result<NodeIndicator> {
    let mut seen = vec![false; n];
    for &i in omega {
        if i >= n {
            return Err(Error::Contract(format!("node {i} out of range for n = {n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Contract(format!("node {i} selected twice")));
        }
    }
    Ok(NodeIndicator { selected: omega.to_vec(), n })
}

impl NodeIndicator {
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n];
        for &i in &self.selected {
            m[i] = true;
        }
        m
    }

    pub fn matrix(&self) -> ndarray::Array2<f64> {
        let mut m = ndarray::Array2::zeros((self.n, self.n));
        for &i in &self.selected {
            m[[i, i]] = 1.0;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// A perturbed input together with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSample {
    pub x_adv: Array3<f64>,
    /// `t_origin` of the clean window this sample perturbs.
    pub base: usize,
    pub indicator: NodeIndicator,
    pub budget: PerturbBudget,
    pub attack_tag: String,
    /// Objective value at `x_adv`.
    pub loss: f64,
}

/// I.i.d. draws from the open interval `(-epsilon, epsilon)`.
pub fn sample_uniform_delta(shape: (usize, usize, usize), epsilon: f64, seed: u64) -> Result<Array3<f64>> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut rng = seeding::rng(seed);
    Ok(Array3::from_shape_simple_fn(shape, || loop {
        let v = rng.random_range(-epsilon..epsilon);
        if v != -epsilon {
            break v;
        }
    }))
}

fn admissible(clean: f64, epsilon: f64) -> (f64, f64) {
    ((clean - epsilon).max(clean.min(0.0)), (clean + epsilon).min(clean.max(1.0)))
}

/// Clamp of `candidate` into the epsilon-ball around `clean` intersected with the data range.
pub fn clip_project(candidate: &Array3<f64>, clean: &Array3<f64>, epsilon: f64) -> Array3<f64> {
    let mut out = candidate.clone();
    ndarray::Zip::from(&mut out).and(clean).for_each(|v, &c| {
        let (lo, hi) = admissible(c, epsilon);
        *v = v.clamp(lo, hi);
    });
    out
}

/// `x + delta` on the selected nodes, clipped to the data range; other nodes untouched.
pub fn apply_delta(x: &Array3<f64>, delta: &Array3<f64>, indicator: &NodeIndicator) -> Result<Array3<f64>> {
    if x.dim() != delta.dim() {
        return Err(Error::Contract(format!("delta shape {:?} does not match input {:?}", delta.dim(), x.dim())));
    }
    if indicator.n != x.dim().1 {
        return Err(Error::Contract(format!("indicator covers {} nodes, input has {}", indicator.n, x.dim().1)));
    }
    let mut out = x.clone();
    for &i in &indicator.selected {
        for t in 0..x.dim().0 {
            for c in 0..x.dim().2 {
                let clean = x[[t, i, c]];
                let (lo, hi) = (clean.min(0.0), clean.max(1.0));
                out[[t, i, c]] = (clean + delta[[t, i, c]]).clamp(lo, hi);
            }
        }
    }
    Ok(out)
}

/// PGD against every window with nodes chosen by `strategy` (`budget.eta` per sample).
pub fn attack_windows(
    model: &Forecaster,
    graph: &TrafficGraph,
    windows: &[&SampleWindow],
    strategy: Strategy,
    budget: &PerturbBudget,
    init: InitMode,
    seed: u64,
) -> Result<Vec<AdversarialSample>> {
    budget.validate(model.nodes)?;
    let xs: Vec<&Array3<f64>> = windows.iter().map(|w| &w.x).collect();
    let target = target_matrix(&windows.iter().map(|w| &w.y).collect::<Vec<_>>());
    let sets = select_batch(strategy, graph, model, &xs, &target, budget.eta, seeding::derive(seed, "attack-select"))?;
    let indicators = sets.iter().map(|s| make_indicator(s, model.nodes)).collect::<Result<Vec<_>>>()?;
    let out = pgd_attack_batch(model, &xs, &target, &indicators, budget, Objective::Mse, init, seeding::derive(seed, "attack-pgd"))?;
    Ok(out
        .into_iter()
        .zip(indicators)
        .zip(windows)
        .map(|((o, indicator), w)| AdversarialSample {
            x_adv: o.x_adv,
            base: w.t_origin,
            indicator,
            budget: budget.clone(),
            attack_tag: format!("pgd-{strategy}"),
            loss: o.loss,
        })
        .collect())
}
