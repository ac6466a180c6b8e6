//! Seeds x defenses x attack cells, evaluated on the test split in data units.

use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::{Array2, Array3};
use serde::Serialize;

use super::config::{DataSource, Defense, ExecSetting, ExperimentConfig};
use crate::advtrain::{adversarial_train, plain_adversarial_train, AtConfig};
use crate::datakit::{load_csv, prepare, synth_traffic_with, Prepared, SampleWindow, Scaler};
use crate::error::{Error, Result};
use crate::forecaster::{mae_metric, rmse_metric, subsample, target_matrix, train_clean, Forecaster};
use crate::parallel::{self, ExecMode};
use crate::perturb::{attack_windows, nodes_for_fraction, PerturbBudget, Strategy};
use crate::policy::{train_policy, PolicyNet};
use crate::seeding;

/// Metrics of one seed in one cell, in data units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedValue {
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportCell {
    pub defense: Defense,
    /// `None` for the clean row.
    pub attack: Option<Strategy>,
    /// Percent of attacked nodes; 0 for the clean row.
    pub lambda: f64,
    pub values: Vec<SeedValue>,
    pub failures: Vec<(u64, String)>,
}

/// Mean and sample standard deviation (0 for a single value), rounded to 4 decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

pub fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

impl ReportCell {
    pub fn attack_name(&self) -> &'static str {
        self.attack.map_or("clean", Strategy::name)
    }

    pub fn failed(&self) -> bool {
        self.values.is_empty()
    }

    pub fn summary(&self) -> Option<Summary> {
        if self.values.is_empty() {
            return None;
        }
        let (mae_mean, mae_std) = mean_std(&self.values.iter().map(|v| v.mae).collect::<Vec<_>>());
        let (rmse_mean, rmse_std) = mean_std(&self.values.iter().map(|v| v.rmse).collect::<Vec<_>>());
        Some(Summary { mae_mean: round4(mae_mean), mae_std: round4(mae_std), rmse_mean: round4(rmse_mean), rmse_std: round4(rmse_std) })
    }

    pub fn median_mae(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.values.iter().map(|v| v.mae).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub lambdas: Vec<f64>,
    pub cells: Vec<ReportCell>,
}

impl EvalReport {
    pub fn cell(&self, defense: Defense, attack: Option<Strategy>, lambda: f64) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.defense == defense && c.attack == attack && (c.lambda - lambda).abs() < 1e-9)
    }
}

/// Loads or generates the dataset for one seed and normalises it.
pub fn build_data(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let d = &cfg.dataset;
    let (graph, series) = match d.source {
        DataSource::Synthetic => synth_traffic_with(d.nodes, d.timesteps, d.data_seed.unwrap_or_else(|| seeding::derive(seed, "data")), &d.synth)?,
        DataSource::Csv => {
            let s = d.series_csv.as_deref().ok_or_else(|| Error::Config("series_csv missing".into()))?;
            let a = d.adjacency_csv.as_deref().ok_or_else(|| Error::Config("adjacency_csv missing".into()))?;
            let loaded = load_csv(s, a)?;
            if loaded.imputed > 0 {
                info!("imputed {} missing cells", loaded.imputed);
            }
            (loaded.graph, loaded.series)
        }
    };
    prepare(graph, &series, d.tau, d.horizon, d.ratios)
}

pub fn apply_execution(cfg: &ExperimentConfig) {
    parallel::set_mode(match cfg.execution.mode {
        ExecSetting::Parallel => ExecMode::Parallel,
        ExecSetting::Sequential => ExecMode::Sequential,
    });
}

pub fn new_model(cfg: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<Forecaster> {
    let mut m = Forecaster::new(cfg.model.clone(), data.nodes(), data.channels(), data.tau, data.horizon, seeding::derive(seed, "model"))?;
    m.set_micro_batch(cfg.execution.micro_batch);
    Ok(m)
}

pub fn train_clean_model(cfg: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<Forecaster> {
    let mut m = new_model(cfg, data, seed)?;
    train_clean(&mut m, &data.split.train, &data.split.val, &cfg.train, seeding::derive(seed, "clean"))?;
    Ok(m)
}

pub fn policy_budget(cfg: &ExperimentConfig, n: usize) -> PerturbBudget {
    cfg.defense.train_budget(n)
}

/// Trains the node-selection policy against a scratch copy of `model`.
pub fn train_policy_for(cfg: &ExperimentConfig, data: &Prepared, model: &Forecaster, seed: u64) -> Result<(PolicyNet, crate::policy::PolicyTrainLog)> {
    let mut policy = PolicyNet::new(cfg.policy.clone(), data.nodes(), data.channels(), data.tau, seeding::derive(seed, "policy"))?;
    policy.set_micro_batch(cfg.execution.micro_batch);
    let mut scratch = model.clone();
    let budget = policy_budget(cfg, data.nodes());
    let log = train_policy(&mut policy, &mut scratch, &data.graph, &data.split.train, &cfg.policy_train, &budget, seeding::derive(seed, "policy-train"))?;
    Ok((policy, log))
}

/// Trains `defense` starting from the clean model.
pub fn train_defense(
    cfg: &ExperimentConfig,
    data: &Prepared,
    clean: &Forecaster,
    defense: Defense,
    seed: u64,
    artifacts: Option<&Path>,
) -> Result<Forecaster> {
    let mut model = clean.clone();
    let at_seed = seeding::derive(seed, defense.name());
    match defense {
        Defense::None => {}
        Defense::At => {
            let log = plain_adversarial_train(&mut model, &data.graph, &data.split.train, &data.split.val, &cfg.defense, at_seed)?;
            if let Some(dir) = artifacts {
                log.write_csv(&dir.join("at_train_log.csv"))?;
            }
        }
        Defense::Rdat => {
            let (policy, plog) = train_policy_for(cfg, data, clean, seed)?;
            let at_cfg = AtConfig { selection: crate::advtrain::Selection::Policy, ..cfg.defense.clone() };
            let log = adversarial_train(&mut model, Some(&policy), &data.graph, &data.split.train, &data.split.val, &at_cfg, at_seed)?;
            if let Some(dir) = artifacts {
                policy.save(&dir.join("policy"), seed)?;
                plog.write_csv(&dir.join("policy_train_log.csv"))?;
                log.write_csv(&dir.join("rdat_train_log.csv"))?;
            }
        }
    }
    Ok(model)
}

/// Records scaler bounds in checkpoint metadata.
pub fn scaler_meta(scaler: &Scaler) -> toml::Table {
    let mut t = toml::Table::new();
    let arr = |v: &[f64]| toml::Value::Array(v.iter().map(|&x| toml::Value::Float(x)).collect());
    t.insert("scaler_min".into(), arr(&scaler.min));
    t.insert("scaler_max".into(), arr(&scaler.max));
    t
}

/// MAE and RMSE in data units of predictions against targets (both normalised).
pub fn denormalized_metrics(data: &Prepared, pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, f64)> {
    let p = pred.mapv(|v| data.denormalize(v));
    let t = target.mapv(|v| data.denormalize(v));
    Ok((mae_metric(&p, &t)?, rmse_metric(&p, &t)?))
}

pub fn clean_metrics(model: &Forecaster, data: &Prepared, windows: &[&SampleWindow]) -> Result<(f64, f64)> {
    let xs: Vec<&Array3<f64>> = windows.iter().map(|w| &w.x).collect();
    let target = target_matrix(&windows.iter().map(|w| &w.y).collect::<Vec<_>>());
    denormalized_metrics(data, &model.predict_matrix(&xs)?, &target)
}

/// Seed for one attack strength. It ignores the defense and the strategy, so every
/// model faces the same random starts and equal node sets give equal attacks.
pub fn attack_seed(seed: u64, lambda: f64) -> u64 {
    seeding::derive_n(seed, "attack-cell", lambda.to_bits())
}

pub fn eval_budget(cfg: &ExperimentConfig, n: usize, lambda: f64) -> PerturbBudget {
    PerturbBudget { epsilon: cfg.attack.epsilon, eta: nodes_for_fraction(lambda / 100.0, n), steps: cfg.attack.steps, gamma: cfg.attack.gamma }
}

pub fn attacked_metrics(
    cfg: &ExperimentConfig,
    model: &Forecaster,
    data: &Prepared,
    windows: &[&SampleWindow],
    strategy: Strategy,
    lambda: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let budget = eval_budget(cfg, data.nodes(), lambda);
    let adv = attack_windows(model, &data.graph, windows, strategy, &budget, cfg.attack.init_mode, attack_seed(seed, lambda))?;
    let xs: Vec<&Array3<f64>> = adv.iter().map(|a| &a.x_adv).collect();
    let target = target_matrix(&windows.iter().map(|w| &w.y).collect::<Vec<_>>());
    denormalized_metrics(data, &model.predict_matrix(&xs)?, &target)
}

fn checkpoint_dir(artifacts: Option<&Path>, seed: u64) -> Option<PathBuf> {
    artifacts.map(|a| a.join("checkpoints").join(format!("seed-{seed}")))
}

/// Runs the full grid. `sweep` selects the sweep lambda list. When `artifacts`
/// is given, checkpoints and training logs are written below it.
pub fn run_experiment(cfg: &ExperimentConfig, sweep: bool, artifacts: Option<&Path>) -> Result<EvalReport> {
    cfg.validate()?;
    apply_execution(cfg);
    let lambdas = if sweep { cfg.attack.sweep_lambdas.clone() } else { cfg.attack.lambdas.clone() };
    let mut cells: Vec<ReportCell> = Vec::new();
    for &defense in &cfg.defenses {
        let attacks = std::iter::once((None, 0.0)).chain(cfg.attack.strategies.iter().flat_map(|&s| lambdas.iter().map(move |&l| (Some(s), l))));
        for (attack, lambda) in attacks {
            cells.push(ReportCell { defense, attack, lambda, values: Vec::new(), failures: Vec::new() });
        }
    }
    for &seed in &cfg.seeds {
        info!("seed {seed}: building data");
        let ckpt = checkpoint_dir(artifacts, seed);
        if let Some(dir) = &ckpt {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let stage = build_data(cfg, seed).and_then(|data| {
            let clean = train_clean_model(cfg, &data, seed)?;
            Ok((data, clean))
        });
        let (data, clean) = match stage {
            Ok(v) => v,
            Err(e) => {
                warn!("seed {seed} failed before any defense: {e}");
                for c in &mut cells {
                    c.failures.push((seed, e.to_string()));
                }
                continue;
            }
        };
        let test = subsample(&data.split.test, cfg.attack.max_test_windows);
        for &defense in &cfg.defenses {
            info!("seed {seed}: defense {}", defense.name());
            let trained = train_defense(cfg, &data, &clean, defense, seed, ckpt.as_deref()).and_then(|m| {
                if let Some(dir) = &ckpt {
                    let mut meta = scaler_meta(&data.scaler);
                    meta.insert("defense".into(), toml::Value::String(defense.name().into()));
                    m.save(&dir.join(defense.name()), seed, meta)?;
                }
                Ok(m)
            });
            for cell in cells.iter_mut().filter(|c| c.defense == defense) {
                let result = trained.as_ref().map_err(|e| Error::Training { epoch: 0, message: e.to_string() }).and_then(|model| match cell.attack {
                    None => clean_metrics(model, &data, &test),
                    Some(s) => attacked_metrics(cfg, model, &data, &test, s, cell.lambda, seed),
                });
                match result {
                    Ok((mae, rmse)) => cell.values.push(SeedValue { seed, mae, rmse }),
                    Err(e) => {
                        warn!("seed {seed}, {} / {} / {}: {e}", defense.name(), cell.attack_name(), cell.lambda);
                        cell.failures.push((seed, e.to_string()));
                    }
                }
            }
        }
    }
    Ok(EvalReport { config_hash: cfg.hash()?, seeds: cfg.seeds.clone(), lambdas, cells })
}

/// Per-sample, per-horizon MAE (data units) of one attack cell, for the attack dump.
pub fn attack_records(
    cfg: &ExperimentConfig,
    model: &Forecaster,
    data: &Prepared,
    windows: &[&SampleWindow],
    strategy: Strategy,
    lambda: f64,
    seed: u64,
) -> Result<Vec<crate::perturb::AttackRecord>> {
    let budget = eval_budget(cfg, data.nodes(), lambda);
    let adv = attack_windows(model, &data.graph, windows, strategy, &budget, cfg.attack.init_mode, attack_seed(seed, lambda))?;
    let xs: Vec<&Array3<f64>> = adv.iter().map(|a| &a.x_adv).collect();
    let preds = model.predict_batch(&xs)?;
    Ok(preds
        .iter()
        .zip(windows)
        .enumerate()
        .map(|(k, (p, w))| {
            let horizon_mae = (0..p.dim().0)
                .map(|h| {
                    let n = p.dim().1;
                    (0..n).map(|i| (data.denormalize(p[[h, i, 0]]) - data.denormalize(w.y[[h, i, 0]])).abs()).sum::<f64>() / n as f64
                })
                .collect();
            crate::perturb::AttackRecord { sample_id: k, strategy: strategy.name().into(), lambda, epsilon: budget.epsilon, horizon_mae }
        })
        .collect())
}
