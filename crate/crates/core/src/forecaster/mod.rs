//! The target forecaster: adaptive-adjacency diffusion convolution over gated
//! dilated temporal convolutions, with a two-layer head emitting every horizon
//! at once.

mod layers;
mod metrics;
mod train;

pub use layers::{
    adaptive_adjacency, build_head, build_trunk, head_forward, spatial_layer, temporal_layer, trunk_forward, ArchConfig,
    BlockLayout, Geometry, HeadLayout, TrunkLayout, TrunkOutput,
};
pub use metrics::{mae_metric, mse_loss, rmse_metric};
pub use train::{evaluate_inputs, evaluate_windows, subsample, train_clean, EpochRecord, TrainConfig, TrainOutcome};
pub(crate) use train::epoch_batches;

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::parallel;
use crate::seeding;

/// `horizon x n x 1` forecast in normalised units.
pub type Prediction = Array3<f64>;

/// Loss whose gradient drives attacks and training.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Mean squared error against the target.
    Mse,
    /// MSE plus `alpha` times the MSE against fixed reference predictions
    /// (laid out like the targets).
    Distilled { reference: &'a Array2<f64>, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub arch: ArchConfig,
    pub nodes: usize,
    pub channels: usize,
    pub tau: usize,
    pub horizon: usize,
    pub params: ParamSet,
    trunk: TrunkLayout,
    head: HeadLayout,
    micro_batch: usize,
}

/// `c x (batch * tau * n)` input matrix.
pub fn input_matrix(xs: &[&Array3<f64>]) -> Array2<f64> {
    let (tau, n, c) = xs[0].dim();
    let mut m = Array2::zeros((c, xs.len() * tau * n));
    for (b, x) in xs.iter().enumerate() {
        for ((t, i, ch), &v) in x.indexed_iter() {
            m[[ch, b * tau * n + t * n + i]] = v;
        }
    }
    m
}

/// Inverse of [`input_matrix`].
pub fn input_arrays(m: &Array2<f64>, batch: usize, tau: usize, n: usize) -> Vec<Array3<f64>> {
    let c = m.nrows();
    (0..batch).map(|b| Array3::from_shape_fn((tau, n, c), |(t, i, ch)| m[[ch, b * tau * n + t * n + i]])).collect()
}

/// `horizon x (batch * n)` target matrix from `horizon x n x 1` arrays.
pub fn target_matrix(ys: &[&Array3<f64>]) -> Array2<f64> {
    let (h, n, _) = ys[0].dim();
    let mut m = Array2::zeros((h, ys.len() * n));
    for (b, y) in ys.iter().enumerate() {
        for s in 0..h {
            for i in 0..n {
                m[[s, b * n + i]] = y[[s, i, 0]];
            }
        }
    }
    m
}

/// Splits a `horizon x (batch * n)` matrix back into per-sample predictions.
pub fn prediction_arrays(m: &Array2<f64>, n: usize) -> Vec<Prediction> {
    let batch = m.ncols() / n;
    (0..batch).map(|b| Array3::from_shape_fn((m.nrows(), n, 1), |(s, i, _)| m[[s, b * n + i]])).collect()
}

/// Per-sample value of `objective` given predictions and targets in matrix layout.
pub fn per_sample_loss(pred: &Array2<f64>, target: &Array2<f64>, objective: Objective<'_>, n: usize) -> Vec<f64> {
    let batch = pred.ncols() / n;
    let per = (pred.nrows() * n) as f64;
    (0..batch)
        .map(|b| {
            let cols = b * n..(b + 1) * n;
            let sq = |other: &Array2<f64>| -> f64 {
                cols.clone().flat_map(|c| (0..pred.nrows()).map(move |r| (r, c))).map(|(r, c)| (pred[[r, c]] - other[[r, c]]).powi(2)).sum::<f64>() / per
            };
            match objective {
                Objective::Mse => sq(target),
                Objective::Distilled { reference, alpha } => sq(target) + alpha * sq(reference),
            }
        })
        .collect()
}

fn chunk_ranges(len: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    (0..len).step_by(size.max(1)).map(|s| s..(s + size.max(1)).min(len)).collect()
}

impl Forecaster {
    pub fn new(arch: ArchConfig, nodes: usize, channels: usize, tau: usize, horizon: usize, seed: u64) -> Result<Self> {
        arch.validate(tau)?;
        if nodes == 0 || channels == 0 || horizon == 0 {
            return Err(Error::Config(format!("invalid model geometry n={nodes} c={channels} T={horizon}")));
        }
        let mut rng = seeding::rng(seeding::derive(seed, "forecaster-init"));
        let mut params = ParamSet::new();
        let trunk = build_trunk(&mut params, "trunk", &arch, nodes, channels, &mut rng);
        let head = build_head(&mut params, "head", arch.blocks * arch.hidden_channels, arch.head_channels, horizon, &mut rng);
        Ok(Self { arch, nodes, channels, tau, horizon, params, trunk, head, micro_batch: 8 })
    }

    /// Samples per tape; chunks are independent work items for the parallel map.
    pub fn micro_batch(&self) -> usize {
        self.micro_batch
    }

    pub fn set_micro_batch(&mut self, size: usize) {
        self.micro_batch = size.max(1);
    }

    pub fn geometry(&self, batch: usize) -> Geometry {
        Geometry { batch, time: self.tau, nodes: self.nodes }
    }

    /// Records the forward pass; returns the `horizon x (batch * n)` output.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], x: Var, batch: usize) -> Var {
        let trunk = trunk_forward(tape, vars, &self.trunk, x, self.geometry(batch));
        head_forward(tape, vars, &self.head, trunk.skip)
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        if x.dim() != (self.tau, self.nodes, self.channels) {
            return Err(Error::Contract(format!(
                "input shape {:?} does not match model ({}, {}, {})",
                x.dim(),
                self.tau,
                self.nodes,
                self.channels
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite value in model input".into()));
        }
        Ok(())
    }

    pub fn adaptive_adjacency(&self) -> Array2<f64> {
        let mut tape = Tape::new();
        let s = tape.constant(self.params.get(self.trunk.source_embed).clone());
        let t = tape.constant(self.params.get(self.trunk.target_embed).clone());
        let a = adaptive_adjacency(&mut tape, s, t);
        tape.value(a).clone()
    }

    pub fn trunk_layout(&self) -> &TrunkLayout {
        &self.trunk
    }

    pub fn head_layout(&self) -> &HeadLayout {
        &self.head
    }

    fn predict_chunk(&self, xs: &[&Array3<f64>]) -> Array2<f64> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let x = tape.constant(input_matrix(xs));
        let out = self.forward_tape(&mut tape, &vars, x, xs.len());
        tape.value(out).clone()
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Prediction> {
        self.check_input(x)?;
        Ok(prediction_arrays(&self.predict_chunk(&[x]), self.nodes).remove(0))
    }

    /// Batched forward in target layout, chunked over the parallel map.
    pub fn predict_matrix(&self, xs: &[&Array3<f64>]) -> Result<Array2<f64>> {
        for x in xs {
            self.check_input(x)?;
        }
        let chunks = chunk_ranges(xs.len(), self.micro_batch);
        let parts = parallel::map(&chunks, |r| self.predict_chunk(&xs[r.clone()]));
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(1), &views).expect("equal row counts"))
    }

    pub fn predict_batch(&self, xs: &[&Array3<f64>]) -> Result<Vec<Prediction>> {
        Ok(prediction_arrays(&self.predict_matrix(xs)?, self.nodes))
    }

    fn objective_var(&self, tape: &mut Tape, out: Var, target: &Array2<f64>, objective: Objective<'_>, cols: std::ops::Range<usize>) -> Var {
        let y = tape.constant(target.slice(ndarray::s![.., cols.clone()]).to_owned());
        let loss = tape.mse(out, y);
        match objective {
            Objective::Mse => loss,
            Objective::Distilled { reference, alpha } => {
                let r = tape.constant(reference.slice(ndarray::s![.., cols]).to_owned());
                let kd = tape.mse(out, r);
                let kd = tape.scale(kd, alpha);
                tape.add(loss, kd)
            }
        }
    }

    /// Gradient of each sample's own objective with respect to its input,
    /// plus the per-sample objective values at those inputs.
    pub fn input_gradients(
        &self,
        xs: &[&Array3<f64>],
        target: &Array2<f64>,
        objective: Objective<'_>,
    ) -> Result<(Vec<Array3<f64>>, Vec<f64>)> {
        for x in xs {
            self.check_input(x)?;
        }
        let n = self.nodes;
        let chunks = chunk_ranges(xs.len(), self.micro_batch);
        let parts = parallel::map(&chunks, |r| {
            let batch = r.len();
            let mut tape = Tape::new();
            let vars = self.params.attach(&mut tape, false);
            let x = tape.leaf(input_matrix(&xs[r.clone()]), true);
            let out = self.forward_tape(&mut tape, &vars, x, batch);
            let cols = r.start * n..r.end * n;
            let loss = self.objective_var(&mut tape, out, target, objective, cols.clone());
            // The chunk loss averages over samples; rescale so each sample sees
            // the gradient of its own objective.
            let loss = tape.scale(loss, batch as f64);
            let grads = tape.backward(loss);
            let gx = grads.get_or_zeros(x, tape.shape(x));
            let pred = tape.value(out).clone();
            let sub_target = target.slice(ndarray::s![.., cols.clone()]).to_owned();
            let losses = match objective {
                Objective::Mse => per_sample_loss(&pred, &sub_target, Objective::Mse, n),
                Objective::Distilled { reference, alpha } => {
                    let sub_ref = reference.slice(ndarray::s![.., cols]).to_owned();
                    per_sample_loss(&pred, &sub_target, Objective::Distilled { reference: &sub_ref, alpha }, n)
                }
            };
            (input_arrays(&gx, batch, self.tau, n), losses)
        });
        let mut grads = Vec::with_capacity(xs.len());
        let mut losses = Vec::with_capacity(xs.len());
        for (g, l) in parts {
            grads.extend(g);
            losses.extend(l);
        }
        Ok((grads, losses))
    }

    /// Gradient of the objective with respect to a single input window.
    pub fn grad_input(&self, x: &Array3<f64>, y: &Array3<f64>, objective: Objective<'_>) -> Result<Array3<f64>> {
        let target = target_matrix(&[y]);
        Ok(self.input_gradients(&[x], &target, objective)?.0.remove(0))
    }

    /// Batch-mean objective and its parameter gradients.
    pub fn loss_and_grads(&self, xs: &[&Array3<f64>], target: &Array2<f64>, objective: Objective<'_>) -> Result<(f64, Vec<Array2<f64>>)> {
        for x in xs {
            self.check_input(x)?;
        }
        let n = self.nodes;
        let total = xs.len() as f64;
        let chunks = chunk_ranges(xs.len(), self.micro_batch);
        let parts = parallel::map(&chunks, |r| {
            let mut tape = Tape::new();
            let vars = self.params.attach(&mut tape, true);
            let x = tape.constant(input_matrix(&xs[r.clone()]));
            let out = self.forward_tape(&mut tape, &vars, x, r.len());
            let loss = self.objective_var(&mut tape, out, target, objective, r.start * n..r.end * n);
            let weight = r.len() as f64 / total;
            let loss = tape.scale(loss, weight);
            let grads = tape.backward(loss);
            (tape.scalar(loss), self.params.collect_grads(&grads, &vars))
        });
        let mut iter = parts.into_iter();
        let (mut loss, mut grads) = iter.next().ok_or_else(|| Error::Contract("empty batch".into()))?;
        for (l, g) in iter {
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(g) {
                *acc += &gi;
            }
        }
        Ok((loss, grads))
    }

    pub fn save(&self, dir: &Path, seed: u64, extra: toml::Table) -> Result<()> {
        let mut meta = extra;
        meta.insert("arch".into(), toml::Value::try_from(&self.arch).map_err(|e| Error::Serde(e.to_string()))?);
        for (k, v) in [("nodes", self.nodes), ("channels", self.channels), ("tau", self.tau), ("horizon", self.horizon)] {
            meta.insert(k.into(), toml::Value::Integer(v as i64));
        }
        meta.insert("seed".into(), toml::Value::Integer(seed as i64));
        self.params.save(dir, "forecaster", meta)
    }

    /// Loads a checkpoint written by [`Forecaster::save`]; returns the manifest metadata too.
    pub fn load(dir: &Path) -> Result<(Self, toml::Table)> {
        let (params, manifest) = ParamSet::load(dir)?;
        if manifest.kind != "forecaster" {
            return Err(Error::Schema(format!("{} holds a {:?} checkpoint, expected forecaster", dir.display(), manifest.kind)));
        }
        let meta = manifest.meta;
        let get = |k: &str| -> Result<usize> {
            meta.get(k)
                .and_then(|v| v.as_integer())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Schema(format!("manifest missing integer {k:?}")))
        };
        let arch: ArchConfig = meta
            .get("arch")
            .cloned()
            .ok_or_else(|| Error::Schema("manifest missing arch".into()))?
            .try_into()
            .map_err(|e: toml::de::Error| Error::Schema(e.to_string()))?;
        let mut model = Forecaster::new(arch, get("nodes")?, get("channels")?, get("tau")?, get("horizon")?, 0)?;
        if model.params.names() != params.names() {
            return Err(Error::Schema("checkpoint arrays do not match the architecture".into()));
        }
        for (dst, src) in model.params.values_mut().iter_mut().zip(params.values()) {
            if dst.dim() != src.dim() {
                return Err(Error::Schema("checkpoint array shape does not match the architecture".into()));
            }
            dst.assign(src);
        }
        Ok((model, meta))
    }
}
