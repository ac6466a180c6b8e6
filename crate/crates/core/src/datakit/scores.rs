use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::TrafficGraph;

/// L1 residual at which power iteration stops.
pub const PAGERANK_TOL: f64 = 1e-10;

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
        v
    } else {
        uniform(v.len())
    }
}

fn warn_if_disconnected(g: &TrafficGraph, what: &str) {
    if !g.is_connected() {
        log::warn!("{what} on a disconnected graph ({} components); scores are per component", g.components().len());
    }
}

/// Weighted out-degree, normalised to sum to 1.
pub fn degree_scores(g: &TrafficGraph) -> Vec<f64> {
    warn_if_disconnected(g, "degree scores");
    normalize(g.adjacency.rows().into_iter().map(|r| r.sum()).collect())
}

/// Weighted PageRank by power iteration; dangling nodes jump uniformly.
pub fn pagerank_scores(g: &TrafficGraph, damping: f64, max_iters: usize) -> Vec<f64> {
    warn_if_disconnected(g, "pagerank");
    let n = g.n();
    let out: Vec<f64> = g.adjacency.rows().into_iter().map(|r| r.sum()).collect();
    let mut rank = uniform(n);
    for _ in 0..max_iters {
        let dangling: f64 = (0..n).filter(|&i| out[i] == 0.0).map(|i| rank[i]).sum();
        let base = (1.0 - damping) / n as f64 + damping * dangling / n as f64;
        let mut next = vec![base; n];
        for i in 0..n {
            if out[i] == 0.0 {
                continue;
            }
            let share = damping * rank[i] / out[i];
            for (j, nj) in next.iter_mut().enumerate() {
                let w = g.adjacency[[i, j]];
                if w > 0.0 {
                    *nj += share * w;
                }
            }
        }
        let residual: f64 = next.iter().zip(&rank).map(|(a, b)| (a - b).abs()).sum();
        rank = next;
        if residual < PAGERANK_TOL {
            break;
        }
    }
    normalize(rank)
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Brandes betweenness on the weighted graph with edge length `1 / weight`,
/// normalised to sum to 1 (uniform when no node lies on any shortest path).
pub fn betweenness_scores(g: &TrafficGraph) -> Vec<f64> {
    warn_if_disconnected(g, "betweenness");
    let n = g.n();
    let mut centrality = vec![0.0; n];
    let tie = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0; n];
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        sigma[s] = 1.0;
        dist[s] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(0.0, s));
        while let Some(Entry(d, v)) = heap.pop() {
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            stack.push(v);
            for w in 0..n {
                let weight = g.adjacency[[v, w]];
                if weight <= 0.0 || done[w] {
                    continue;
                }
                let alt = dist[v] + 1.0 / weight;
                if dist[w].is_infinite() || (alt < dist[w] && !tie(alt, dist[w])) {
                    dist[w] = alt;
                    sigma[w] = sigma[v];
                    preds[w] = vec![v];
                    heap.push(Entry(alt, w));
                } else if tie(alt, dist[w]) {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }
    normalize(centrality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn graph(adj: Array2<f64>) -> TrafficGraph {
        let n = adj.nrows();
        TrafficGraph::new(adj, (0..n).map(|i| i.to_string()).collect()).unwrap()
    }

    fn star() -> TrafficGraph {
        graph(array![[0., 1., 1., 1.], [1., 0., 0., 0.], [1., 0., 0., 0.], [1., 0., 0., 0.]])
    }

    #[test]
    fn triangle_has_uniform_degree() {
        let g = graph(array![[0., 1., 1.], [1., 0., 1.], [1., 1., 0.]]);
        for s in degree_scores(&g) {
            assert!((s - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn star_center_dominates() {
        let g = star();
        let pr = pagerank_scores(&g, 0.85, 1000);
        let bc = betweenness_scores(&g);
        for leaf in 1..4 {
            assert!(pr[0] > pr[leaf]);
            assert!(bc[0] > bc[leaf]);
        }
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn path_betweenness_matches_hand_count() {
        // 0 - 1 - 2 - 3: node 1 lies on paths (0,2),(0,3) in both directions.
        let g = graph(array![[0., 1., 0., 0.], [1., 0., 1., 0.], [0., 1., 0., 1.], [0., 0., 1., 0.]]);
        let bc = betweenness_scores(&g);
        assert!((bc[1] - 0.5).abs() < 1e-12 && (bc[2] - 0.5).abs() < 1e-12);
        assert_eq!(bc[0], 0.0);
    }

    #[test]
    fn split_shortest_paths_share_credit() {
        // Square 0-1-3 and 0-2-3: nodes 1 and 2 each carry half of the 0<->3 paths.
        let g = graph(array![[0., 1., 1., 0.], [1., 0., 0., 1.], [1., 0., 0., 1.], [0., 1., 1., 0.]]);
        let bc = betweenness_scores(&g);
        for s in bc {
            assert!((s - 0.25).abs() < 1e-12);
        }
    }
}
