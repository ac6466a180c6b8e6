//! Traffic data: graphs, series, synthetic generation, CSV ingestion,
//! normalisation, windowing and static node scores.

mod csvio;
mod scaler;
mod scores;
mod synth;
mod window;

pub use csvio::{load_csv, write_csv, LoadedData};
pub use scaler::Scaler;
pub use scores::{betweenness_scores, degree_scores, pagerank_scores, PAGERANK_TOL};
pub use synth::{synth_traffic, synth_traffic_with, SynthParams};
pub use window::{make_windows, prepare, split_windows, DatasetSplit, Prepared, SampleWindow, SplitRatios};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Weighted adjacency over `n` sensor nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    pub adjacency: Array2<f64>,
    pub node_ids: Vec<String>,
}

impl TrafficGraph {
    pub fn new(adjacency: Array2<f64>, node_ids: Vec<String>) -> Result<Self> {
        let g = Self { adjacency, node_ids };
        g.validate()?;
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.adjacency.dim();
        if r != c {
            return Err(Error::Schema(format!("adjacency is {r}x{c}, expected square")));
        }
        if self.node_ids.len() != r {
            return Err(Error::Schema(format!("{} node ids for {r} adjacency rows", self.node_ids.len())));
        }
        for ((i, j), &w) in self.adjacency.indexed_iter() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Schema(format!("adjacency[{i},{j}] = {w} is not a non-negative weight")));
            }
            if i == j && w != 0.0 {
                return Err(Error::Schema(format!("adjacency diagonal entry {i} is {w}, expected 0")));
            }
        }
        Ok(())
    }

    /// Connected components of the undirected support of the adjacency.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            label[start] = id;
            while let Some(u) = stack.pop() {
                members.push(u);
                for (v, lv) in label.iter_mut().enumerate() {
                    let linked = self.adjacency[[u, v]] > 0.0 || self.adjacency[[v, u]] > 0.0;
                    if linked && *lv == usize::MAX {
                        *lv = id;
                        stack.push(v);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }
}

/// Multichannel readings: `timesteps x n x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    pub values: Array3<f64>,
    pub interval_minutes: u32,
    pub channel_names: Vec<String>,
}

impl TrafficSeries {
    pub fn timesteps(&self) -> usize {
        self.values.dim().0
    }

    pub fn nodes(&self) -> usize {
        self.values.dim().1
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }
}
