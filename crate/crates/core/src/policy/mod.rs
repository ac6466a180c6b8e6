//! Attention policy that picks an ordered set of adversarial nodes.
//!
//! The encoder is a narrow copy of the forecaster trunk whose head emits a
//! `d`-dimensional embedding per node. The decoder builds a context query from
//! the graph embedding and the last chosen node, refines it with multi-head
//! attention over all nodes, and scores every node with a clipped single-head
//! compatibility. Chosen nodes are masked for the remaining steps.

mod reward;
mod train;

pub use reward::{balanced_reward, evaluate_cost, evaluate_costs, RewardRecord};
pub use train::{reinforce_update, rms_scaled, train_policy, IterationRecord, PolicyTrainConfig, PolicyTrainLog};

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::forecaster::{build_head, build_trunk, head_forward, input_matrix, trunk_forward, ArchConfig, Geometry, HeadLayout, TrunkLayout};
use crate::params::{glorot, uniform, ParamSet};
use crate::parallel;
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub encoder: ArchConfig,
    /// Node embedding width `d`.
    pub embed_dim: usize,
    pub heads: usize,
    /// Logit clip constant `C`.
    pub clip: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            encoder: ArchConfig {
                blocks: 2,
                hidden_channels: 16,
                diffusion_depth: 2,
                temporal_kernel: 2,
                dilations: vec![1, 2],
                node_embed_dim: 10,
                head_channels: 16,
            },
            embed_dim: 16,
            heads: 4,
            clip: 10.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self, tau: usize) -> Result<()> {
        self.encoder.validate(tau)?;
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("heads ({}) must divide embed_dim ({})", self.heads, self.embed_dim)));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config("clip constant must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Sampled,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSolution {
    pub omega: Vec<usize>,
    /// Sum of the per-step log-probabilities.
    pub logprob: f64,
    pub mode: DecodeMode,
}

/// Output of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderLayout {
    query: Vec<usize>,
    key: Vec<usize>,
    value: Vec<usize>,
    final_query: usize,
    final_key: usize,
    placeholder: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    pub nodes: usize,
    pub channels: usize,
    pub tau: usize,
    pub params: ParamSet,
    trunk: TrunkLayout,
    head: HeadLayout,
    decoder: DecoderLayout,
    micro_batch: usize,
}

/// Decoder tensors that depend only on the node embeddings.
/// Variance floor when standardising node embeddings.
const NORM_EPS: f64 = 1e-5;

struct Keys {
    f: Var,
    u_bar: Var,
    head_keys: Vec<Var>,
    head_values: Vec<Var>,
    final_keys: Var,
}

fn all_masked(mask: &[bool]) -> bool {
    mask.iter().all(|&m| m)
}

impl PolicyNet {
    pub fn new(config: PolicyConfig, nodes: usize, channels: usize, tau: usize, seed: u64) -> Result<Self> {
        config.validate(tau)?;
        if nodes == 0 || channels == 0 {
            return Err(Error::Config("policy needs at least one node and channel".into()));
        }
        let mut rng = seeding::rng(seeding::derive(seed, "policy-init"));
        let mut params = ParamSet::new();
        let trunk = build_trunk(&mut params, "enc", &config.encoder, nodes, channels, &mut rng);
        let d = config.embed_dim;
        let head = build_head(&mut params, "enc_head", config.encoder.blocks * config.encoder.hidden_channels, config.encoder.head_channels, d, &mut rng);
        let dk = d / config.heads;
        let mut query = Vec::new();
        let mut key = Vec::new();
        let mut value = Vec::new();
        for h in 0..config.heads {
            query.push(params.push(format!("dec_query_{h}"), glorot(&mut rng, dk, 2 * d)));
            key.push(params.push(format!("dec_key_{h}"), glorot(&mut rng, dk, d)));
            value.push(params.push(format!("dec_value_{h}"), glorot(&mut rng, dk, d)));
        }
        let final_query = params.push("dec_final_query", glorot(&mut rng, d, d));
        let final_key = params.push("dec_final_key", glorot(&mut rng, d, d));
        let placeholder = params.push("dec_placeholder", uniform(&mut rng, d, 1, 1.0 / (d as f64).sqrt()));
        let decoder = DecoderLayout { query, key, value, final_query, final_key, placeholder };
        Ok(Self { config, nodes, channels, tau, params, trunk, head, decoder, micro_batch: 8 })
    }

    pub fn set_micro_batch(&mut self, size: usize) {
        self.micro_batch = size.max(1);
    }

    pub fn trunk_layout(&self) -> &TrunkLayout {
        &self.trunk
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        if x.dim() != (self.tau, self.nodes, self.channels) {
            return Err(Error::Contract(format!("policy input shape {:?} does not match ({}, {}, {})", x.dim(), self.tau, self.nodes, self.channels)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite value in policy input".into()));
        }
        Ok(())
    }

    /// Embeddings for a batch: `d x (batch * n)`.
    fn encode_tape(&self, tape: &mut Tape, vars: &[Var], xs: &[&Array3<f64>]) -> Var {
        let x = tape.constant(input_matrix(xs));
        let geo = Geometry { batch: xs.len(), time: self.tau, nodes: self.nodes };
        let trunk = trunk_forward(tape, vars, &self.trunk, x, geo);
        head_forward(tape, vars, &self.head, trunk.skip)
    }

    fn keys(&self, tape: &mut Tape, vars: &[Var], embeddings: Var, sample: usize) -> Keys {
        let n = self.nodes;
        let raw = tape.select_cols(embeddings, (sample * n..(sample + 1) * n).collect());
        let u_bar = tape.mean_cols(raw);
        // Attention works on embeddings standardised across nodes; the raw ones
        // share a large common offset that drives every compatibility into the
        // flat part of the tanh clip.
        let f = tape.standardize_rows(raw, NORM_EPS);
        let head_keys = self.decoder.key.iter().map(|&k| tape.matmul(vars[k], f)).collect();
        let head_values = self.decoder.value.iter().map(|&v| tape.matmul(vars[v], f)).collect();
        let final_keys = tape.matmul(vars[self.decoder.final_key], f);
        Keys { f, u_bar, head_keys, head_values, final_keys }
    }

    /// Log-probabilities (`1 x n`, `-inf` on masked nodes) and clipped logits.
    fn step_tape(&self, tape: &mut Tape, vars: &[Var], keys: &Keys, last: Option<usize>, mask: &[bool]) -> (Var, Var) {
        let d = self.config.embed_dim as f64;
        let dk = d / self.config.heads as f64;
        let last_emb = match last {
            Some(i) => tape.select_cols(keys.f, vec![i]),
            None => vars[self.decoder.placeholder],
        };
        let context = tape.concat_rows(&[keys.u_bar, last_emb]);
        let mut glimpses = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let q = tape.matmul(vars[self.decoder.query[h]], context);
            let qt = tape.transpose(q);
            let compat = tape.matmul(qt, keys.head_keys[h]);
            let compat = tape.scale(compat, 1.0 / dk.sqrt());
            let attn = tape.softmax_rows(compat, Some(mask.to_vec()));
            let attn_t = tape.transpose(attn);
            glimpses.push(tape.matmul(keys.head_values[h], attn_t));
        }
        let refined = tape.concat_rows(&glimpses);
        let q = tape.matmul(vars[self.decoder.final_query], refined);
        let qt = tape.transpose(q);
        let compat = tape.matmul(qt, keys.final_keys);
        let compat = tape.scale(compat, 1.0 / d.sqrt());
        let squashed = tape.tanh(compat);
        let logits = tape.scale(squashed, self.config.clip);
        let logp = tape.log_softmax_rows(logits, Some(mask.to_vec()));
        (logp, logits)
    }

    /// Runs `eta` decoding steps; `choose` picks the node at each step from the
    /// current probabilities. Returns the chosen nodes and the picked log-probabilities.
    fn decode_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        keys: &Keys,
        eta: usize,
        mut choose: impl FnMut(usize, &[f64]) -> usize,
    ) -> Result<(Vec<usize>, Vec<Var>)> {
        let mut mask = vec![false; self.nodes];
        let mut omega = Vec::with_capacity(eta);
        let mut picks = Vec::with_capacity(eta);
        for step in 0..eta {
            if all_masked(&mask) {
                return Err(Error::Contract("every node is masked".into()));
            }
            let (logp, _) = self.step_tape(tape, vars, keys, omega.last().copied(), &mask);
            let probs: Vec<f64> = tape.value(logp).iter().map(|l| l.exp()).collect();
            let node = choose(step, &probs);
            if node >= self.nodes || mask[node] {
                return Err(Error::Contract(format!("node {node} is not selectable at step {step}")));
            }
            picks.push(tape.pick(logp, 0, node));
            mask[node] = true;
            omega.push(node);
        }
        Ok((omega, picks))
    }

    /// Node embeddings `F` (`n x d`) and graph embedding (column means of `F`).
    pub fn encode(&self, x: &Array3<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let emb = self.encode_tape(&mut tape, &vars, &[x]);
        let f = tape.value(emb).t().to_owned();
        let u_bar = f.mean_axis(ndarray::Axis(0)).expect("n > 0");
        Ok((f, u_bar))
    }

    /// One decoding step from explicit embeddings (`f` is `n x d`).
    pub fn decode_step(&self, f: &Array2<f64>, last: Option<usize>, mask: &[bool]) -> Result<StepDistribution> {
        if f.dim() != (self.nodes, self.config.embed_dim) || mask.len() != self.nodes {
            return Err(Error::Contract("decode_step shape mismatch".into()));
        }
        if all_masked(mask) {
            return Err(Error::Contract("every node is masked".into()));
        }
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let emb = tape.constant(f.t().to_owned());
        let keys = self.keys(&mut tape, &vars, emb, 0);
        let (logp, logits) = self.step_tape(&mut tape, &vars, &keys, last, mask);
        Ok(StepDistribution {
            logits: tape.value(logits).iter().copied().collect(),
            probs: tape.value(logp).iter().map(|l| l.exp()).collect(),
        })
    }

    /// Chooses `eta` distinct nodes for every input.
    pub fn sample_batch(&self, xs: &[&Array3<f64>], eta: usize, mode: DecodeMode, seed: u64) -> Result<Vec<NodeSolution>> {
        if eta > self.nodes {
            return Err(Error::Contract(format!("eta {eta} exceeds node count {}", self.nodes)));
        }
        for x in xs {
            self.check_input(x)?;
        }
        let chunks: Vec<_> = (0..xs.len()).step_by(self.micro_batch).map(|s| s..(s + self.micro_batch).min(xs.len())).collect();
        let parts = parallel::map(&chunks, |r| -> Result<Vec<NodeSolution>> {
            let mut tape = Tape::new();
            let vars = self.params.attach(&mut tape, false);
            let emb = self.encode_tape(&mut tape, &vars, &xs[r.clone()]);
            r.clone()
                .enumerate()
                .map(|(local, k)| {
                    let keys = self.keys(&mut tape, &vars, emb, local);
                    let mut rng = seeding::rng(seeding::derive_n(seed, "policy-sample", k as u64));
                    let (omega, picks) = self.decode_tape(&mut tape, &vars, &keys, eta, |_, probs| match mode {
                        DecodeMode::Greedy => argmax(probs),
                        DecodeMode::Sampled => draw(probs, rng.random::<f64>()),
                    })?;
                    let logprob = picks.iter().map(|&p| tape.scalar(p)).sum();
                    Ok(NodeSolution { omega, logprob, mode })
                })
                .collect()
        });
        let mut out = Vec::with_capacity(xs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn sample_solution(&self, x: &Array3<f64>, eta: usize, mode: DecodeMode, seed: u64) -> Result<NodeSolution> {
        Ok(self.sample_batch(&[x], eta, mode, seed)?.remove(0))
    }

    /// `sum_k weights[k] * logprob(solutions[k] | xs[k])` and its parameter gradient,
    /// with log-probabilities recomputed by teacher forcing.
    pub fn weighted_logprob_grads(&self, xs: &[&Array3<f64>], solutions: &[NodeSolution], weights: &[f64]) -> Result<(f64, Vec<Array2<f64>>)> {
        if xs.len() != solutions.len() || xs.len() != weights.len() || xs.is_empty() {
            return Err(Error::Contract("policy batch, solutions and weights must align".into()));
        }
        for x in xs {
            self.check_input(x)?;
        }
        let chunks: Vec<_> = (0..xs.len()).step_by(self.micro_batch).map(|s| s..(s + self.micro_batch).min(xs.len())).collect();
        let parts = parallel::map(&chunks, |r| -> Result<(f64, Vec<Array2<f64>>)> {
            let mut tape = Tape::new();
            let vars = self.params.attach(&mut tape, true);
            let emb = self.encode_tape(&mut tape, &vars, &xs[r.clone()]);
            let mut total: Option<Var> = None;
            for (local, k) in r.clone().enumerate() {
                let keys = self.keys(&mut tape, &vars, emb, local);
                let omega = &solutions[k].omega;
                let (_, picks) = self.decode_tape(&mut tape, &vars, &keys, omega.len(), |step, _| omega[step])?;
                for p in picks {
                    let term = tape.scale(p, weights[k]);
                    total = Some(match total {
                        Some(t) => tape.add(t, term),
                        None => term,
                    });
                }
            }
            match total {
                Some(t) => {
                    let grads = tape.backward(t);
                    Ok((tape.scalar(t), self.params.collect_grads(&grads, &vars)))
                }
                None => Ok((0.0, self.params.values().iter().map(|v| Array2::zeros(v.dim())).collect())),
            }
        });
        let mut value = 0.0;
        let mut grads: Option<Vec<Array2<f64>>> = None;
        for p in parts {
            let (v, g) = p?;
            value += v;
            grads = Some(match grads {
                None => g,
                Some(mut acc) => {
                    for (a, gi) in acc.iter_mut().zip(g) {
                        *a += &gi;
                    }
                    acc
                }
            });
        }
        Ok((value, grads.expect("non-empty batch")))
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        let mut meta = toml::Table::new();
        meta.insert("config".into(), toml::Value::try_from(&self.config).map_err(|e| Error::Serde(e.to_string()))?);
        for (k, v) in [("nodes", self.nodes), ("channels", self.channels), ("tau", self.tau)] {
            meta.insert(k.into(), toml::Value::Integer(v as i64));
        }
        meta.insert("seed".into(), toml::Value::Integer(seed as i64));
        self.params.save(dir, "policy", meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (params, manifest) = ParamSet::load(dir)?;
        if manifest.kind != "policy" {
            return Err(Error::Schema(format!("{} holds a {:?} checkpoint, expected policy", dir.display(), manifest.kind)));
        }
        let meta = manifest.meta;
        let get = |k: &str| -> Result<usize> {
            meta.get(k).and_then(|v| v.as_integer()).map(|v| v as usize).ok_or_else(|| Error::Schema(format!("manifest missing integer {k:?}")))
        };
        let config: PolicyConfig = meta
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Schema("manifest missing config".into()))?
            .try_into()
            .map_err(|e: toml::de::Error| Error::Schema(e.to_string()))?;
        let mut net = PolicyNet::new(config, get("nodes")?, get("channels")?, get("tau")?, 0)?;
        if net.params.names() != params.names() || net.params.values().iter().zip(params.values()).any(|(a, b)| a.dim() != b.dim()) {
            return Err(Error::Schema("policy checkpoint does not match its configuration".into()));
        }
        net.params = params;
        Ok(net)
    }
}

/// First index of the largest probability.
fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw; `u` in `[0, 1)`. Zero-probability entries are never chosen.
fn draw(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if target < acc {
                return i;
            }
        }
    }
    last
}
