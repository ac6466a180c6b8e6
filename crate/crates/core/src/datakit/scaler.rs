use std::ops::Range;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, TrafficSeries};
use crate::error::{Error, Result};

/// Per-channel min-max map onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub fitted_on: String,
}

impl Scaler {
    /// Fits on the timesteps touched by the training windows only.
    pub fn fit(series: &TrafficSeries, split: &DatasetSplit) -> Result<Self> {
        let range = split.train_time_range().ok_or_else(|| Error::Parameter("cannot fit a scaler on an empty training split".into()))?;
        Self::fit_range(&series.values, range, "train")
    }

    pub fn fit_range(values: &Array3<f64>, range: Range<usize>, tag: &str) -> Result<Self> {
        let (steps, n, channels) = values.dim();
        if range.start >= range.end || range.end > steps {
            return Err(Error::Parameter(format!("scaler range {range:?} outside 0..{steps}")));
        }
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for t in range {
            for i in 0..n {
                for c in 0..channels {
                    let v = values[[t, i, c]];
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        for c in 0..channels {
            if max[c] <= min[c] {
                return Err(Error::DegenerateChannel { channel: c, value: min[c] });
            }
        }
        Ok(Self { min, max, fitted_on: tag.to_string() })
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    pub fn span(&self, channel: usize) -> f64 {
        self.max[channel] - self.min[channel]
    }

    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        (x - self.min[channel]) / self.span(channel)
    }

    pub fn invert(&self, channel: usize, x: f64) -> f64 {
        x * self.span(channel) + self.min[channel]
    }

    pub fn apply_array(&self, values: &Array3<f64>) -> Array3<f64> {
        let mut out = values.clone();
        for ((_, _, c), v) in out.indexed_iter_mut() {
            *v = self.apply(c, *v);
        }
        out
    }

    pub fn invert_array(&self, values: &Array3<f64>) -> Array3<f64> {
        let mut out = values.clone();
        for ((_, _, c), v) in out.indexed_iter_mut() {
            *v = self.invert(c, *v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{make_windows, split_windows, synth_traffic, SplitRatios};
    use ndarray::Array3;

    fn one_channel(vals: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((vals.len(), 1, 1), vals.to_vec()).unwrap()
    }

    #[test]
    fn linear_map_and_endpoints() {
        let s = Scaler::fit_range(&one_channel(&[10.0, 30.0, 15.0]), 0..3, "train").unwrap();
        assert_eq!(s.apply(0, 20.0), 0.5);
        assert_eq!(s.apply(0, 10.0), 0.0);
        assert_eq!(s.apply(0, 30.0), 1.0);
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let err = Scaler::fit_range(&one_channel(&[4.0, 4.0, 4.0]), 0..3, "train").unwrap_err();
        assert!(matches!(err, Error::DegenerateChannel { channel: 0, .. }));
    }

    #[test]
    fn train_maps_into_unit_interval_and_test_round_trips() {
        let (_, series) = synth_traffic(5, 400, 2).unwrap();
        let split = split_windows(make_windows(&series, 12, 12).unwrap(), SplitRatios::default()).unwrap();
        let scaler = Scaler::fit(&series, &split).unwrap();
        let scaled = scaler.apply_array(&series.values);
        let range = split.train_time_range().unwrap();
        for t in range {
            for i in 0..5 {
                let v = scaled[[t, i, 0]];
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let back = scaler.invert_array(&scaled);
        for (a, b) in back.iter().zip(series.values.iter()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}
