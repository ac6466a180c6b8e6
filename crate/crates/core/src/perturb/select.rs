//! Node selectors used by the baseline attacks and as the policy's reward baseline.

use std::fmt;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::AttackTarget;
use crate::datakit::{betweenness_scores, degree_scores, pagerank_scores, TrafficGraph};
use crate::error::{Error, Result};
use crate::forecaster::{target_matrix, Objective};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Degree,
    #[serde(rename = "pagerank")]
    PageRank,
    /// Betweenness centrality.
    Centrality,
    /// Gradient-saliency stand-in for the TNDS heuristic.
    Tnds,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Random, Strategy::Degree, Strategy::PageRank, Strategy::Centrality, Strategy::Tnds];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Degree => "degree",
            Strategy::PageRank => "pagerank",
            Strategy::Centrality => "centrality",
            Strategy::Tnds => "tnds",
        }
    }

    /// Whether the selection depends only on the graph (and seed), not the sample.
    pub fn is_static(self) -> bool {
        !matches!(self, Strategy::Tnds)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown attack strategy {s:?}")))
    }
}

/// Indices of the `eta` largest scores; equal scores go to the lower index.
pub fn top_k(scores: &[f64], eta: usize) -> Result<Vec<usize>> {
    if eta > scores.len() {
        return Err(Error::Contract(format!("eta {eta} exceeds node count {}", scores.len())));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(eta);
    Ok(idx)
}

/// Uniform sample of `eta` distinct nodes out of `n`.
pub fn random_subset(n: usize, eta: usize, seed: u64) -> Result<Vec<usize>> {
    if eta > n {
        return Err(Error::Contract(format!("eta {eta} exceeds node count {n}")));
    }
    let mut rng = seeding::rng(seed);
    Ok(rand::seq::index::sample(&mut rng, n, eta).into_vec())
}

/// Graph-only selection. `seed` is used by [`Strategy::Random`] only.
pub fn select_static(strategy: Strategy, graph: &TrafficGraph, eta: usize, seed: u64) -> Result<Vec<usize>> {
    let n = graph.n();
    match strategy {
        Strategy::Random => random_subset(n, eta, seed),
        Strategy::Degree => top_k(&degree_scores(graph), eta),
        Strategy::PageRank => top_k(&pagerank_scores(graph, 0.85, 1000), eta),
        Strategy::Centrality => top_k(&betweenness_scores(graph), eta),
        Strategy::Tnds => Err(Error::Config("tnds selection needs a model and a sample".into())),
    }
}

/// Per-node L1 norm of the clean-input MSE gradient, summed over time and channels.
pub fn saliency_scores(grad: &Array3<f64>) -> Vec<f64> {
    let (tau, n, c) = grad.dim();
    (0..n).map(|i| (0..tau).flat_map(|t| (0..c).map(move |ch| (t, ch))).map(|(t, ch)| grad[[t, i, ch]].abs()).sum()).collect()
}

pub fn select_tnds<M: AttackTarget + ?Sized>(model: &M, x: &Array3<f64>, y: &Array3<f64>, eta: usize) -> Result<Vec<usize>> {
    let target = target_matrix(&[y]);
    Ok(select_tnds_batch(model, &[x], &target, eta)?.remove(0))
}

pub fn select_tnds_batch<M: AttackTarget + ?Sized>(model: &M, xs: &[&Array3<f64>], target: &Array2<f64>, eta: usize) -> Result<Vec<Vec<usize>>> {
    let (grads, _) = model.input_gradients(xs, target, Objective::Mse)?;
    grads.iter().map(|g| top_k(&saliency_scores(g), eta)).collect()
}

/// Node sets for a batch of samples. Static strategies give the same set to every
/// sample except [`Strategy::Random`], which draws per sample from `(seed, k)`.
pub fn select_batch<M: AttackTarget + ?Sized>(
    strategy: Strategy,
    graph: &TrafficGraph,
    model: &M,
    xs: &[&Array3<f64>],
    target: &Array2<f64>,
    eta: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    match strategy {
        Strategy::Tnds => select_tnds_batch(model, xs, target, eta),
        Strategy::Random => (0..xs.len()).map(|k| random_subset(graph.n(), eta, seeding::derive_n(seed, "random-select", k as u64))).collect(),
        s => {
            let set = select_static(s, graph, eta, seed)?;
            Ok(vec![set; xs.len()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn star() -> TrafficGraph {
        let mut a = Array2::zeros((4, 4));
        for i in 1..4 {
            a[[0, i]] = 1.0;
            a[[i, 0]] = 1.0;
        }
        TrafficGraph::new(a, (0..4).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn full_budget_selects_every_node() {
        let g = star();
        for s in [Strategy::Random, Strategy::Degree, Strategy::PageRank, Strategy::Centrality] {
            let mut sel = select_static(s, &g, 4, 3).unwrap();
            sel.sort_unstable();
            assert_eq!(sel, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn star_center_wins_structural_strategies() {
        let g = star();
        for s in [Strategy::Degree, Strategy::PageRank, Strategy::Centrality] {
            assert_eq!(select_static(s, &g, 1, 0).unwrap(), vec![0]);
        }
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(top_k(&[1.0, 2.0, 2.0, 0.5], 3).unwrap(), vec![1, 2, 0]);
        assert_eq!(top_k(&[0.0; 4], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn oversized_budget_is_rejected() {
        assert!(matches!(select_static(Strategy::Degree, &star(), 5, 0), Err(Error::Contract(_))));
        assert!(matches!(random_subset(3, 4, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn random_selection_is_seeded() {
        let g = star();
        assert_eq!(select_static(Strategy::Random, &g, 2, 9).unwrap(), select_static(Strategy::Random, &g, 2, 9).unwrap());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
    }
}
