//! Graph-temporal building blocks shared by the forecaster and the policy
//! encoder. All functions record onto a [`Tape`] using the channel-major
//! `(batch, time, node)` column layout.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, uniform, ParamSet};
use crate::seeding::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub blocks: usize,
    pub hidden_channels: usize,
    /// Number of adjacency powers beyond the identity term.
    pub diffusion_depth: usize,
    pub temporal_kernel: usize,
    pub dilations: Vec<usize>,
    pub node_embed_dim: usize,
    /// Width of the first output-head layer.
    pub head_channels: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            hidden_channels: 32,
            diffusion_depth: 2,
            temporal_kernel: 2,
            dilations: vec![1, 2, 1, 2],
            node_embed_dim: 10,
            head_channels: 64,
        }
    }
}

impl ArchConfig {
    pub fn receptive_field(&self) -> usize {
        1 + self.dilations.iter().map(|d| (self.temporal_kernel - 1) * d).sum::<usize>()
    }

    pub fn validate(&self, tau: usize) -> Result<()> {
        if self.blocks == 0 || self.hidden_channels == 0 || self.temporal_kernel == 0 || self.node_embed_dim == 0 || self.head_channels == 0 {
            return Err(Error::Config(format!("architecture sizes must be positive: {self:?}")));
        }
        if self.dilations.len() != self.blocks {
            return Err(Error::Config(format!("{} dilations given for {} blocks", self.dilations.len(), self.blocks)));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("dilations must be >= 1".into()));
        }
        if self.receptive_field() > tau {
            return Err(Error::Config(format!("receptive field {} exceeds input length {tau}", self.receptive_field())));
        }
        Ok(())
    }
}

/// Parameter indices of one gated temporal + diffusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub filter: Vec<usize>,
    pub filter_bias: usize,
    pub gate: Vec<usize>,
    pub gate_bias: usize,
    pub spatial: Vec<usize>,
    pub dilation: usize,
}

/// Parameter indices of the adaptive adjacency, input projection and blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkLayout {
    pub source_embed: usize,
    pub target_embed: usize,
    pub input_weight: usize,
    pub input_bias: usize,
    pub blocks: Vec<BlockLayout>,
}

/// Two 1x1 layers with a rectifier between them.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLayout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

pub fn build_trunk(params: &mut ParamSet, prefix: &str, arch: &ArchConfig, n: usize, channels: usize, rng: &mut Rng) -> TrunkLayout {
    let h = arch.hidden_channels;
    let e = arch.node_embed_dim;
    let source_embed = params.push(format!("{prefix}/source_embed"), uniform(rng, n, e, 1.0));
    let target_embed = params.push(format!("{prefix}/target_embed"), uniform(rng, n, e, 1.0));
    let input_weight = params.push(format!("{prefix}/input_weight"), glorot(rng, h, channels));
    let input_bias = params.push(format!("{prefix}/input_bias"), Array2::zeros((h, 1)));
    let mut blocks = Vec::with_capacity(arch.blocks);
    for (b, &dilation) in arch.dilations.iter().enumerate() {
        let mut taps = |name: &str, params: &mut ParamSet| -> Vec<usize> {
            (0..arch.temporal_kernel).map(|k| params.push(format!("{prefix}/block{b}/{name}_tap{k}"), glorot(rng, h, h))).collect()
        };
        let filter = taps("filter", params);
        let filter_bias = params.push(format!("{prefix}/block{b}/filter_bias"), Array2::zeros((h, 1)));
        let gate = taps("gate", params);
        let gate_bias = params.push(format!("{prefix}/block{b}/gate_bias"), Array2::zeros((h, 1)));
        let spatial = (0..=arch.diffusion_depth)
            .map(|i| params.push(format!("{prefix}/block{b}/spatial_power{i}"), glorot(rng, h, h)))
            .collect();
        blocks.push(BlockLayout { filter, filter_bias, gate, gate_bias, spatial, dilation });
    }
    TrunkLayout { source_embed, target_embed, input_weight, input_bias, blocks }
}

pub fn build_head(params: &mut ParamSet, prefix: &str, inputs: usize, hidden: usize, outputs: usize, rng: &mut Rng) -> HeadLayout {
    HeadLayout {
        w1: params.push(format!("{prefix}/w1"), glorot(rng, hidden, inputs)),
        b1: params.push(format!("{prefix}/b1"), Array2::zeros((hidden, 1))),
        w2: params.push(format!("{prefix}/w2"), glorot(rng, outputs, hidden)),
        b2: params.push(format!("{prefix}/b2"), Array2::zeros((outputs, 1))),
    }
}

/// Row-softmax of `relu(E1 E2^T)`.
pub fn adaptive_adjacency(tape: &mut Tape, source: Var, target: Var) -> Var {
    let t = tape.transpose(target);
    let logits = tape.matmul(source, t);
    let r = tape.relu(logits);
    tape.softmax_rows(r, None)
}

/// Gated dilated causal convolution along time:
/// `tanh(filter * E) . sigmoid(gate * E)`.
///
/// Tap `k` of a kernel of width `K` reads time `t - (K - 1 - k) * dilation`;
/// reads before the window start see zeros.
#[allow(clippy::too_many_arguments)]
pub fn temporal_layer(
    tape: &mut Tape,
    e: Var,
    filter: &[Var],
    filter_bias: Var,
    gate: &[Var],
    gate_bias: Var,
    dilation: usize,
    geometry: Geometry,
) -> Var {
    let f = causal_conv(tape, e, filter, filter_bias, dilation, geometry);
    let g = causal_conv(tape, e, gate, gate_bias, dilation, geometry);
    let f = tape.tanh(f);
    let g = tape.sigmoid(g);
    tape.mul(f, g)
}

fn causal_conv(tape: &mut Tape, e: Var, taps: &[Var], bias: Var, dilation: usize, geo: Geometry) -> Var {
    let k = taps.len();
    let mut acc: Option<Var> = None;
    for (i, &w) in taps.iter().enumerate() {
        let lag = (k - 1 - i) * dilation;
        let src = if lag == 0 { e } else { tape.time_shift(e, geo.time * geo.nodes, lag * geo.nodes) };
        let term = tape.matmul(w, src);
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    tape.add_bias(acc.expect("kernel has at least one tap"), bias)
}

/// Diffusion over the adaptive adjacency: `sum_i W_i (A^i Z')`.
pub fn spatial_layer(tape: &mut Tape, z: Var, adj: Var, weights: &[Var], nodes: usize) -> Var {
    let mut power = z;
    let mut out = tape.matmul(weights[0], z);
    for &w in &weights[1..] {
        power = tape.node_mix(power, adj, nodes);
        let term = tape.matmul(w, power);
        out = tape.add(out, term);
    }
    out
}

/// Column geometry of a batch: `batch x time x nodes` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub batch: usize,
    pub time: usize,
    pub nodes: usize,
}

impl Geometry {
    pub fn cols(&self) -> usize {
        self.batch * self.time * self.nodes
    }

    /// Columns of the final time step, ordered `(batch, node)`.
    pub fn last_step_cols(&self) -> Vec<usize> {
        (0..self.batch)
            .flat_map(|b| (0..self.nodes).map(move |i| b * self.time * self.nodes + (self.time - 1) * self.nodes + i))
            .collect()
    }
}

/// Output of [`trunk_forward`].
pub struct TrunkOutput {
    pub adjacency: Var,
    /// Final-step block outputs stacked on rows: `(blocks * hidden) x (batch * n)`.
    pub skip: Var,
}

pub fn trunk_forward(tape: &mut Tape, vars: &[Var], layout: &TrunkLayout, x: Var, geo: Geometry) -> TrunkOutput {
    let adjacency = adaptive_adjacency(tape, vars[layout.source_embed], vars[layout.target_embed]);
    let e0 = tape.matmul(vars[layout.input_weight], x);
    let mut e = tape.add_bias(e0, vars[layout.input_bias]);
    let last = geo.last_step_cols();
    let mut skips = Vec::with_capacity(layout.blocks.len());
    for block in &layout.blocks {
        let filter: Vec<Var> = block.filter.iter().map(|&i| vars[i]).collect();
        let gate: Vec<Var> = block.gate.iter().map(|&i| vars[i]).collect();
        let spatial: Vec<Var> = block.spatial.iter().map(|&i| vars[i]).collect();
        let zt = temporal_layer(tape, e, &filter, vars[block.filter_bias], &gate, vars[block.gate_bias], block.dilation, geo);
        let z = spatial_layer(tape, zt, adjacency, &spatial, geo.nodes);
        skips.push(tape.select_cols(z, last.clone()));
        e = tape.add(z, e);
    }
    let skip = tape.concat_rows(&skips);
    TrunkOutput { adjacency, skip }
}

pub fn head_forward(tape: &mut Tape, vars: &[Var], layout: &HeadLayout, input: Var) -> Var {
    let h = tape.matmul(vars[layout.w1], input);
    let h = tape.add_bias(h, vars[layout.b1]);
    let h = tape.relu(h);
    let o = tape.matmul(vars[layout.w2], h);
    tape.add_bias(o, vars[layout.b2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn geo(batch: usize, time: usize, nodes: usize) -> Geometry {
        Geometry { batch, time, nodes }
    }

    #[test]
    fn zero_embeddings_give_uniform_adjacency() {
        let mut t = Tape::new();
        let e1 = t.constant(Array2::zeros((5, 3)));
        let e2 = t.constant(Array2::zeros((5, 3)));
        let a = adaptive_adjacency(&mut t, e1, e2);
        for v in t.value(a).iter() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_zero_depth_identity() {
        let mut t = Tape::new();
        let z = t.constant(array![[1.0, 2.0, 3.0, 4.0], [5.0, 6.0, 7.0, 8.0]]);
        let a = t.constant(array![[0.5, 0.5], [0.1, 0.9]]);
        let w0 = t.constant(Array2::eye(2));
        let out = spatial_layer(&mut t, z, a, &[w0], 2);
        assert_eq!(t.value(out), t.value(z));
    }

    #[test]
    fn spatial_identity_adjacency_triples() {
        let mut t = Tape::new();
        let zv = array![[1.0, -2.0, 3.0, 0.5]];
        let z = t.constant(zv.clone());
        let a = t.constant(Array2::eye(2));
        let w = t.constant(Array2::eye(1));
        let out = spatial_layer(&mut t, z, a, &[w, w, w], 2);
        assert_eq!(t.value(out), &(zv * 3.0));
    }

    #[test]
    fn spatial_two_nodes_matches_hand_computation() {
        // One channel, two nodes, one time step: Z = W0 Z' + W1 (A Z').
        let mut t = Tape::new();
        let z = t.constant(array![[2.0, 3.0]]);
        let a = t.constant(array![[0.25, 0.75], [0.6, 0.4]]);
        let w0 = t.constant(array![[1.5]]);
        let w1 = t.constant(array![[-0.5]]);
        let out = spatial_layer(&mut t, z, a, &[w0, w1], 2);
        let expected0 = 1.5 * 2.0 - 0.5 * (0.25 * 2.0 + 0.75 * 3.0);
        let expected1 = 1.5 * 3.0 - 0.5 * (0.6 * 2.0 + 0.4 * 3.0);
        let v = t.value(out);
        assert!((v[[0, 0]] - expected0).abs() < 1e-12);
        assert!((v[[0, 1]] - expected1).abs() < 1e-12);
    }

    #[test]
    fn closed_gate_silences_output() {
        let mut t = Tape::new();
        let g = geo(1, 4, 2);
        let e = t.constant(Array2::from_shape_fn((3, g.cols()), |(r, c)| (r + c) as f64 * 0.1));
        let w = t.constant(Array2::eye(3));
        let zero_b = t.constant(Array2::zeros((3, 1)));
        let closed = t.constant(Array2::from_elem((3, 1), -1e3));
        let out = temporal_layer(&mut t, e, &[w, w], zero_b, &[w, w], closed, 1, g);
        assert!(t.value(out).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn temporal_output_bounded_by_one() {
        let mut t = Tape::new();
        let g = geo(2, 5, 3);
        let e = t.constant(Array2::from_shape_fn((2, g.cols()), |(r, c)| ((r * 31 + c * 7) % 11) as f64 - 5.0));
        let w = t.constant(array![[4.0, -3.0], [2.0, 6.0]]);
        let b = t.constant(array![[1.0], [-1.0]]);
        let out = temporal_layer(&mut t, e, &[w, w], b, &[w, w], b, 2, g);
        assert!(t.value(out).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn kernel_two_matches_direct_convolution() {
        // Single channel, single node, 5 steps, dilation 1.
        let xs = [0.3, -0.2, 0.8, 0.1, -0.5];
        let (w_prev, w_cur, bias) = (0.7, -1.2, 0.05);
        let (g_prev, g_cur, gbias) = (0.4, 0.9, -0.1);
        let mut t = Tape::new();
        let g = geo(1, 5, 1);
        let e = t.constant(Array2::from_shape_vec((1, 5), xs.to_vec()).unwrap());
        let f = [t.constant(array![[w_prev]]), t.constant(array![[w_cur]])];
        let fb = t.constant(array![[bias]]);
        let gt = [t.constant(array![[g_prev]]), t.constant(array![[g_cur]])];
        let gb = t.constant(array![[gbias]]);
        let out = temporal_layer(&mut t, e, &f, fb, &gt, gb, 1, g);
        for step in 0..5 {
            let prev = if step == 0 { 0.0 } else { xs[step - 1] };
            let filt = w_prev * prev + w_cur * xs[step] + bias;
            let gate = g_prev * prev + g_cur * xs[step] + gbias;
            let expected = filt.tanh() * crate::autograd::sigmoid(gate);
            assert!((t.value(out)[[0, step]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn receptive_field_check() {
        let arch = ArchConfig::default();
        assert_eq!(arch.receptive_field(), 7);
        assert!(arch.validate(12).is_ok());
        assert!(arch.validate(6).is_err());
    }
}
