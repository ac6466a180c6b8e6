use std::ops::Range;

use ndarray::{s, Array3};

use super::{Scaler, TrafficGraph, TrafficSeries};
use crate::error::{Error, Result};

/// History `x` (`tau x n x c`) and target `y` (`horizon x n x 1`, channel 0)
/// cut from one series. `t_origin` is the index of the first history step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub x: Array3<f64>,
    pub y: Array3<f64>,
    pub t_origin: usize,
}

impl SampleWindow {
    pub fn tau(&self) -> usize {
        self.x.dim().0
    }

    pub fn horizon(&self) -> usize {
        self.y.dim().0
    }

    pub fn nodes(&self) -> usize {
        self.x.dim().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

/// Time-ordered train/val/test windows.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
    pub ratios: SplitRatios,
}

impl DatasetSplit {
    /// Timesteps read by any training window (history and target).
    pub fn train_time_range(&self) -> Option<Range<usize>> {
        let first = self.train.first()?;
        let last = self.train.last()?;
        Some(first.t_origin..last.t_origin + last.tau() + last.horizon())
    }
}

pub fn make_windows(series: &TrafficSeries, tau: usize, horizon: usize) -> Result<Vec<SampleWindow>> {
    if tau == 0 || horizon == 0 {
        return Err(Error::Parameter(format!("tau and horizon must be >= 1 (got {tau}, {horizon})")));
    }
    let steps = series.timesteps();
    if steps < tau + horizon {
        return Err(Error::Parameter(format!("series of {steps} steps is shorter than tau + horizon = {}", tau + horizon)));
    }
    Ok((0..=steps - tau - horizon)
        .map(|t0| SampleWindow {
            x: series.values.slice(s![t0..t0 + tau, .., ..]).to_owned(),
            y: series.values.slice(s![t0 + tau..t0 + tau + horizon, .., 0..1]).to_owned(),
            t_origin: t0,
        })
        .collect())
}

/// Floors the val/test counts; the remainder goes to train.
pub fn split_windows(mut windows: Vec<SampleWindow>, ratios: SplitRatios) -> Result<DatasetSplit> {
    let total = ratios.train + ratios.val + ratios.test;
    if [ratios.train, ratios.val, ratios.test].iter().any(|r| !(0.0..=1.0).contains(r)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    windows.sort_by_key(|w| w.t_origin);
    let count = windows.len();
    let n_val = (ratios.val * count as f64 + 1e-9).floor() as usize;
    let n_test = (ratios.test * count as f64 + 1e-9).floor() as usize;
    let n_train = count - n_val - n_test;
    let test = windows.split_off(n_train + n_val);
    let val = windows.split_off(n_train);
    Ok(DatasetSplit { train: windows, val, test, ratios })
}

/// Normalised, windowed, split data ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: TrafficGraph,
    pub scaler: Scaler,
    pub split: DatasetSplit,
    pub tau: usize,
    pub horizon: usize,
}

impl Prepared {
    pub fn nodes(&self) -> usize {
        self.graph.n()
    }

    pub fn channels(&self) -> usize {
        self.scaler.channels()
    }

    /// Converts a normalised target-channel value back to original units.
    pub fn denormalize(&self, v: f64) -> f64 {
        self.scaler.invert(0, v)
    }

    pub fn target_span(&self) -> f64 {
        self.scaler.span(0)
    }
}

pub fn prepare(graph: TrafficGraph, series: &TrafficSeries, tau: usize, horizon: usize, ratios: SplitRatios) -> Result<Prepared> {
    if graph.n() != series.nodes() {
        return Err(Error::Schema(format!("graph has {} nodes, series has {}", graph.n(), series.nodes())));
    }
    let raw_split = split_windows(make_windows(series, tau, horizon)?, ratios)?;
    let scaler = Scaler::fit(series, &raw_split)?;
    let normalized = TrafficSeries { values: scaler.apply_array(&series.values), ..series.clone() };
    let split = split_windows(make_windows(&normalized, tau, horizon)?, ratios)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Parameter(format!(
            "split of {} windows leaves an empty train or test set",
            split.train.len() + split.val.len() + split.test.len()
        )));
    }
    Ok(Prepared { graph, scaler, split, tau, horizon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::synth_traffic;

    #[test]
    fn window_count_and_split_sizes() {
        let (_, series) = synth_traffic(4, 224, 1).unwrap();
        let w = make_windows(&series, 12, 12).unwrap();
        assert_eq!(w.len(), 201);
        let split = split_windows(w, SplitRatios::default()).unwrap();
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (141, 20, 40));
        assert!(split.train.last().unwrap().t_origin < split.val[0].t_origin);
        assert!(split.val.last().unwrap().t_origin < split.test[0].t_origin);
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let (_, series) = synth_traffic(4, 224, 1).unwrap();
        let w = &make_windows(&series, 5, 3).unwrap()[10];
        assert_eq!(w.x[[4, 2, 0]], series.values[[14, 2, 0]]);
        assert_eq!(w.y[[0, 2, 0]], series.values[[15, 2, 0]]);
        assert_eq!(w.y.dim(), (3, 4, 1));
    }

    #[test]
    fn too_short_series_is_rejected() {
        let (_, series) = synth_traffic(4, 200, 1).unwrap();
        assert!(matches!(make_windows(&series, 150, 60), Err(Error::Parameter(_))));
        assert!(matches!(make_windows(&series, 0, 3), Err(Error::Parameter(_))));
    }
}
