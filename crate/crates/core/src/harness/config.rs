//! Experiment configuration. Every field has a default and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::advtrain::AtConfig;
use crate::datakit::{SplitRatios, SynthParams};
use crate::error::{Error, Result};
use crate::forecaster::{ArchConfig, TrainConfig};
use crate::perturb::{InitMode, Strategy};
use crate::policy::{PolicyConfig, PolicyTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub nodes: usize,
    pub timesteps: usize,
    pub synth: SynthParams,
    /// Fixed data seed; when absent each experiment seed generates its own data.
    pub data_seed: Option<u64>,
    pub series_csv: Option<PathBuf>,
    pub adjacency_csv: Option<PathBuf>,
    pub tau: usize,
    pub horizon: usize,
    pub ratios: SplitRatios,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            nodes: 20,
            timesteps: 2000,
            synth: SynthParams::default(),
            data_seed: None,
            series_csv: None,
            adjacency_csv: None,
            tau: 12,
            horizon: 12,
            ratios: SplitRatios::default(),
        }
    }
}

/// A trained model variant that gets attacked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Defense {
    /// Clean training only.
    None,
    /// Random-node adversarial training without distillation.
    At,
    /// Policy-driven adversarial training with self-distillation.
    Rdat,
}

impl Defense {
    pub fn name(self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::At => "at",
            Defense::Rdat => "rdat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackGrid {
    pub strategies: Vec<Strategy>,
    /// Percent of nodes attacked.
    pub lambdas: Vec<f64>,
    /// Grid used in sweep mode instead of `lambdas`.
    pub sweep_lambdas: Vec<f64>,
    pub epsilon: f64,
    pub steps: usize,
    pub gamma: f64,
    pub init_mode: InitMode,
    /// Evenly spaced cap on attacked test windows; `None` attacks the whole test split.
    pub max_test_windows: Option<usize>,
}

impl Default for AttackGrid {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            lambdas: vec![20.0],
            sweep_lambdas: vec![40.0, 60.0, 80.0, 100.0],
            epsilon: 0.5,
            steps: 5,
            gamma: 0.1,
            init_mode: InitMode::Uniform,
            max_test_windows: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecSetting {
    #[default]
    Parallel,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutionConfig {
    pub mode: ExecSetting,
    /// Samples per tape; also the unit of parallel work.
    pub micro_batch: usize,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self { mode: ExecSetting::Parallel, micro_batch: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub defenses: Vec<Defense>,
    pub dataset: DatasetConfig,
    pub model: ArchConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub policy_train: PolicyTrainConfig,
    pub defense: AtConfig,
    pub attack: AttackGrid,
    pub execution: ExecutionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            defenses: vec![Defense::None, Defense::At, Defense::Rdat],
            dataset: DatasetConfig::default(),
            model: ArchConfig::default(),
            train: TrainConfig::default(),
            policy: PolicyConfig::default(),
            policy_train: PolicyTrainConfig::default(),
            defense: AtConfig::default(),
            attack: AttackGrid::default(),
            execution: ExecutionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative CSV paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset.series_csv, &mut cfg.dataset.adjacency_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.defenses.is_empty() {
            return Err(Error::Config("defenses must not be empty".into()));
        }
        let d = &self.dataset;
        if d.tau == 0 || d.horizon == 0 {
            return Err(Error::Config("tau and horizon must be positive".into()));
        }
        if d.source == DataSource::Csv && (d.series_csv.is_none() || d.adjacency_csv.is_none()) {
            return Err(Error::Config("csv datasets need series_csv and adjacency_csv".into()));
        }
        self.model.validate(d.tau)?;
        self.train.validate()?;
        self.defense.validate()?;
        if self.defenses.contains(&Defense::Rdat) {
            self.policy.validate(d.tau)?;
            self.policy_train.validate()?;
        }
        let a = &self.attack;
        if a.strategies.is_empty() {
            return Err(Error::Config("attack.strategies must not be empty".into()));
        }
        for &l in a.lambdas.iter().chain(&a.sweep_lambdas) {
            if !(l > 0.0 && l <= 100.0) {
                return Err(Error::Config(format!("lambda values must lie in (0, 100], got {l}")));
            }
        }
        if !(a.epsilon > 0.0) || a.steps == 0 || !(a.gamma > 0.0) {
            return Err(Error::Config("attack epsilon, steps and gamma must be positive".into()));
        }
        if self.execution.micro_batch == 0 {
            return Err(Error::Config("execution.micro_batch must be positive".into()));
        }
        Ok(())
    }
}
