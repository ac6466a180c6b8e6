use std::path::Path;

use log::info;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{at_loss, kd_loss, snapshot_teacher, TeacherSnapshot};
use crate::datakit::{SampleWindow, TrafficGraph};
use crate::error::{Error, Result};
use crate::forecaster::{epoch_batches, evaluate_inputs, evaluate_windows, subsample, target_matrix, Forecaster, Objective};
use crate::params::{Adam, AdamConfig};
use crate::perturb::{
    attack_windows, make_indicator, nodes_for_fraction, pgd_attack_batch, random_subset, InitMode, NodeIndicator, PerturbBudget, Strategy,
};
use crate::policy::{DecodeMode, PolicyNet};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Policy,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionScope {
    /// One node set for the whole epoch.
    Epoch,
    /// Fresh node sets for every batch (and every sample in it).
    #[default]
    Batch,
}

/// Objective maximised by PGD while crafting training examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PgdLoss {
    #[default]
    At,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtConfig {
    /// Weight of the distillation term.
    pub alpha: f64,
    /// Fraction of nodes attacked during training; the count is rounded up.
    pub train_node_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: Option<usize>,
    pub eval_max_windows: Option<usize>,
    pub adam: AdamConfig,
    pub selection: Selection,
    pub selection_scope: SelectionScope,
    /// Radius, steps and step size. The node count comes from `train_node_ratio`.
    pub budget: PerturbBudget,
    pub pgd_loss: PgdLoss,
    pub init_mode: InitMode,
}

impl Default for AtConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            train_node_ratio: 0.1,
            epochs: 30,
            batch_size: 16,
            batches_per_epoch: None,
            eval_max_windows: None,
            adam: AdamConfig::default(),
            selection: Selection::Policy,
            selection_scope: SelectionScope::Batch,
            budget: PerturbBudget::default(),
            pgd_loss: PgdLoss::At,
            init_mode: InitMode::Uniform,
        }
    }
}

impl AtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.train_node_ratio > 0.0 && self.train_node_ratio <= 1.0) {
            return Err(Error::Config(format!("train_node_ratio must lie in (0, 1], got {}", self.train_node_ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Budget with the node count implied by the training ratio.
    pub fn train_budget(&self, n: usize) -> PerturbBudget {
        self.budget.with_eta(nodes_for_fraction(self.train_node_ratio, n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean MSE on the adversarial training examples.
    pub adv_loss: f64,
    /// Mean of `alpha * KD`; zero in the first epoch.
    pub kd_loss: f64,
    pub clean_val_mae: f64,
    pub adv_val_mae: f64,
    /// Node set of the epoch (epoch scope) or of the first sample of the first batch.
    pub omega: Vec<usize>,
    pub teacher_checksum: Option<String>,
    pub end_checksum: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        w.write_record(["epoch", "adv_loss", "kd_loss", "clean_val_mae", "adv_val_mae", "omega"])?;
        for e in &self.epochs {
            let omega: Vec<String> = e.omega.iter().map(usize::to_string).collect();
            w.write_record([
                e.epoch.to_string(),
                format!("{:.9}", e.adv_loss),
                format!("{:.9}", e.kd_loss),
                format!("{:.9}", e.clean_val_mae),
                format!("{:.9}", e.adv_val_mae),
                omega.join(";"),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn batch_seed(seed: u64, tag: &str, counter: u64) -> u64 {
    seeding::derive_n(seed, tag, counter)
}

fn random_sets(n: usize, eta: usize, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    (0..count).map(|k| random_subset(n, eta, seeding::derive_n(seed, "random-select", k as u64))).collect()
}

/// Clean and PGD-Random validation MAE (normalised units) at the training budget.
fn validation_scores(model: &Forecaster, graph: &TrafficGraph, val: &[&SampleWindow], budget: &PerturbBudget, seed: u64) -> Result<(f64, f64)> {
    let (clean, _) = evaluate_windows(model, val)?;
    let adv = attack_windows(model, graph, val, Strategy::Random, budget, InitMode::Uniform, seeding::derive(seed, "adv-val"))?;
    let xs: Vec<&Array3<f64>> = adv.iter().map(|a| &a.x_adv).collect();
    let ys: Vec<&Array3<f64>> = val.iter().map(|w| &w.y).collect();
    Ok((clean, evaluate_inputs(model, &xs, &ys)?.0))
}

struct Batch<'a> {
    xs: Vec<&'a Array3<f64>>,
    target: Array2<f64>,
}

fn gather<'a>(windows: &'a [SampleWindow], idx: &[usize]) -> Batch<'a> {
    Batch { xs: idx.iter().map(|&i| &windows[i].x).collect(), target: target_matrix(&idx.iter().map(|&i| &windows[i].y).collect::<Vec<_>>()) }
}

fn check_inputs(model: &Forecaster, graph: &TrafficGraph, train: &[SampleWindow], val: &[SampleWindow]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("adversarial training needs non-empty train and validation splits".into()));
    }
    if graph.n() != model.nodes {
        return Err(Error::Contract(format!("graph has {} nodes, model {}", graph.n(), model.nodes)));
    }
    Ok(())
}

/// Policy- or random-driven adversarial training with self-distillation.
/// Returns the per-epoch log; `model` holds the final parameters.
pub fn adversarial_train(
    model: &mut Forecaster,
    policy: Option<&PolicyNet>,
    graph: &TrafficGraph,
    train: &[SampleWindow],
    val: &[SampleWindow],
    cfg: &AtConfig,
    seed: u64,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_inputs(model, graph, train, val)?;
    let n = model.nodes;
    let budget = cfg.train_budget(n);
    budget.validate(n)?;
    let policy = match (cfg.selection, policy) {
        (Selection::Policy, None) => return Err(Error::Config("policy selection requires a pretrained policy".into())),
        (Selection::Policy, Some(p)) if p.nodes != n => return Err(Error::Config(format!("policy covers {} nodes, model {n}", p.nodes))),
        (Selection::Policy, p) => p,
        (Selection::Random, _) => None,
    };
    let val_set = subsample(val, cfg.eval_max_windows);
    let mut rng = seeding::rng(seeding::derive(seed, "adv-batches"));
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut teacher: Option<TeacherSnapshot> = None;
    let mut log = TrainLog::default();
    let mut counter = 0u64;
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.batches_per_epoch, &mut rng);
        let epoch_seed = batch_seed(seed, "adv-epoch-select", epoch as u64);
        let epoch_set: Option<Vec<usize>> = match cfg.selection_scope {
            SelectionScope::Batch => None,
            SelectionScope::Epoch => Some(match policy {
                Some(p) => p.sample_solution(&train[batches[0][0]].x, budget.eta, DecodeMode::Greedy, epoch_seed)?.omega,
                None => random_subset(n, budget.eta, epoch_seed)?,
            }),
        };
        let teacher_checksum = teacher.as_ref().map(TeacherSnapshot::checksum);
        let (mut adv_total, mut kd_total) = (0.0, 0.0);
        let mut first_omega = None;
        for idx in &batches {
            let batch = gather(train, idx);
            let sel_seed = batch_seed(seed, "adv-select", counter);
            let sets = match (&epoch_set, policy) {
                (Some(set), _) => vec![set.clone(); idx.len()],
                (None, Some(p)) => p.sample_batch(&batch.xs, budget.eta, DecodeMode::Greedy, sel_seed)?.into_iter().map(|s| s.omega).collect(),
                (None, None) => random_sets(n, budget.eta, idx.len(), sel_seed)?,
            };
            first_omega.get_or_insert_with(|| sets[0].clone());
            let indicators = sets.iter().map(|s| make_indicator(s, n)).collect::<Result<Vec<NodeIndicator>>>()?;
            let reference = teacher.as_ref().map(|t| t.model().predict_matrix(&batch.xs)).transpose()?;
            let train_objective = match &reference {
                Some(r) => Objective::Distilled { reference: r, alpha: cfg.alpha },
                None => Objective::Mse,
            };
            let pgd_objective = match cfg.pgd_loss {
                PgdLoss::At => train_objective,
                PgdLoss::Mse => Objective::Mse,
            };
            let adv = pgd_attack_batch(&*model, &batch.xs, &batch.target, &indicators, &budget, pgd_objective, cfg.init_mode, batch_seed(seed, "adv-pgd", counter))?;
            let adv_xs: Vec<&Array3<f64>> = adv.iter().map(|a| &a.x_adv).collect();
            let pred = model.predict_matrix(&adv_xs)?;
            let kd = match &reference {
                Some(r) => kd_loss(&pred, r)?,
                None => 0.0,
            };
            let mse = at_loss(&pred, &batch.target, kd, cfg.alpha, true)?;
            let (loss, grads) = model.loss_and_grads(&adv_xs, &batch.target, train_objective)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("non-finite adversarial loss {loss}") });
            }
            adam.step(&mut model.params, &grads);
            adv_total += mse;
            kd_total += if reference.is_some() { cfg.alpha * kd } else { 0.0 };
            counter += 1;
        }
        if !model.params.all_finite() {
            return Err(Error::Training { epoch, message: "parameters diverged".into() });
        }
        let (clean_val_mae, adv_val_mae) = validation_scores(model, graph, &val_set, &budget, seed)?;
        let nb = batches.len().max(1) as f64;
        let end_checksum = model.params.checksum();
        info!("adversarial epoch {epoch}: adv mse {:.6}, kd {:.6}, val mae {clean_val_mae:.6} / {adv_val_mae:.6}", adv_total / nb, kd_total / nb);
        log.epochs.push(EpochLog {
            epoch,
            adv_loss: adv_total / nb,
            kd_loss: kd_total / nb,
            clean_val_mae,
            adv_val_mae,
            omega: epoch_set.or(first_omega).unwrap_or_default(),
            teacher_checksum,
            end_checksum,
        });
        teacher = Some(snapshot_teacher(model, epoch)?);
    }
    Ok(log)
}

/// Classic adversarial training: random nodes per sample, PGD on the MSE, MSE loss.
pub fn plain_adversarial_train(
    model: &mut Forecaster,
    graph: &TrafficGraph,
    train: &[SampleWindow],
    val: &[SampleWindow],
    cfg: &AtConfig,
    seed: u64,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_inputs(model, graph, train, val)?;
    let n = model.nodes;
    let budget = cfg.train_budget(n);
    budget.validate(n)?;
    let val_set = subsample(val, cfg.eval_max_windows);
    let mut rng = seeding::rng(seeding::derive(seed, "adv-batches"));
    let mut adam = Adam::new(cfg.adam, &model.params);
    let mut log = TrainLog::default();
    let mut counter = 0u64;
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.batches_per_epoch, &mut rng);
        let mut total = 0.0;
        let mut first_omega = None;
        for idx in &batches {
            let batch = gather(train, idx);
            let sets = random_sets(n, budget.eta, idx.len(), batch_seed(seed, "adv-select", counter))?;
            first_omega.get_or_insert_with(|| sets[0].clone());
            let indicators = sets.iter().map(|s| make_indicator(s, n)).collect::<Result<Vec<_>>>()?;
            let adv = pgd_attack_batch(&*model, &batch.xs, &batch.target, &indicators, &budget, Objective::Mse, cfg.init_mode, batch_seed(seed, "adv-pgd", counter))?;
            let adv_xs: Vec<&Array3<f64>> = adv.iter().map(|a| &a.x_adv).collect();
            let (loss, grads) = model.loss_and_grads(&adv_xs, &batch.target, Objective::Mse)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("non-finite adversarial loss {loss}") });
            }
            adam.step(&mut model.params, &grads);
            total += loss;
            counter += 1;
        }
        let (clean_val_mae, adv_val_mae) = validation_scores(model, graph, &val_set, &budget, seed)?;
        let nb = batches.len().max(1) as f64;
        log.epochs.push(EpochLog {
            epoch,
            adv_loss: total / nb,
            kd_loss: 0.0,
            clean_val_mae,
            adv_val_mae,
            omega: first_omega.unwrap_or_default(),
            teacher_checksum: None,
            end_checksum: model.params.checksum(),
        });
    }
    Ok(log)
}
