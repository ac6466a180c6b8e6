//! Command-line front end: data synthesis, training, attacks and reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rdat_core::advtrain::{adversarial_train, Selection};
use rdat_core::datakit::{synth_traffic_with, write_csv, Prepared};
use rdat_core::error::{Error, Result};
use rdat_core::forecaster::{subsample, train_clean, Forecaster};
use rdat_core::harness::{
    apply_execution, attack_records, attacked_metrics, build_data, clean_metrics, emit_report, new_model, run_experiment, scaler_meta, train_policy_for,
    ExperimentConfig,
};
use rdat_core::perturb::{write_attack_csv, Strategy};
use rdat_core::policy::PolicyNet;
use rdat_core::seeding;

#[derive(Parser)]
#[command(name = "rdat", version, about = "Adversarial training and attacks for graph traffic forecasters")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as series and adjacency CSV files.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        timesteps: Option<usize>,
    },
    /// Train the forecaster on clean data.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train the node-selection policy against a trained forecaster.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        /// Forecaster checkpoint directory.
        #[arg(long)]
        model: PathBuf,
    },
    /// Adversarially fine-tune a trained forecaster.
    Defend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Policy checkpoint; required unless --random-selection is given.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Attack random nodes instead of policy-selected ones.
        #[arg(long)]
        random_selection: bool,
    },
    /// Attack a trained forecaster on the test split.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Restrict to one strategy (random, degree, pagerank, centrality, tnds).
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Percent of nodes to attack; defaults to the config's list.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Run the configured experiment grid and write the report.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Like `report`, over the sweep list of attack strengths.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    apply_execution(&cfg);
    Ok(cfg)
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_model(path: &Path, data: &Prepared, cfg: &ExperimentConfig) -> Result<Forecaster> {
    if !path.join("manifest.toml").is_file() {
        return Err(Error::Config(format!("no forecaster checkpoint at {}", path.display())));
    }
    let (mut model, _) = Forecaster::load(path)?;
    if (model.nodes, model.channels, model.tau, model.horizon) != (data.nodes(), data.channels(), data.tau, data.horizon) {
        return Err(Error::Config("checkpoint geometry does not match the configured dataset".into()));
    }
    model.set_micro_batch(cfg.execution.micro_batch);
    Ok(model)
}

fn save_model(model: &Forecaster, data: &Prepared, dir: &Path, seed: u64) -> Result<()> {
    model.save(dir, seed, scaler_meta(&data.scaler))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { common, nodes, timesteps } => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let n = nodes.unwrap_or(cfg.dataset.nodes);
            let t = timesteps.unwrap_or(cfg.dataset.timesteps);
            let (graph, series) = synth_traffic_with(n, t, seed, &cfg.dataset.synth)?;
            mkdir(&common.out)?;
            write_csv(&graph, &series, &common.out.join("series.csv"), &common.out.join("adjacency.csv"))?;
            println!("wrote {n} nodes x {t} steps to {}", common.out.display());
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let data = build_data(&cfg, seed)?;
            let mut model = new_model(&cfg, &data, seed)?;
            let outcome = train_clean(&mut model, &data.split.train, &data.split.val, &cfg.train, seeding::derive(seed, "clean"))?;
            mkdir(&common.out)?;
            save_model(&model, &data, &common.out.join("model"), seed)?;
            let mut w = csv::Writer::from_path(common.out.join("train_log.csv")).map_err(|e| Error::Serde(e.to_string()))?;
            for rec in &outcome.history {
                w.serialize(rec)?;
            }
            w.flush().map_err(|e| Error::io(&common.out, e))?;
            let (mae, rmse) = clean_metrics(&model, &data, &subsample(&data.split.test, cfg.attack.max_test_windows))?;
            println!("test MAE {mae:.4}  RMSE {rmse:.4}");
        }
        Command::TrainPolicy { common, model } => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let data = build_data(&cfg, seed)?;
            let model = load_model(&model, &data, &cfg)?;
            let (policy, log) = train_policy_for(&cfg, &data, &model, seed)?;
            mkdir(&common.out)?;
            policy.save(&common.out.join("policy"), seed)?;
            log.write_csv(&common.out.join("policy_train_log.csv"))?;
            let last = cfg.policy_train.epochs - 1;
            println!("mean balanced reward: first epoch {:.6}, last epoch {:.6}", log.epoch_mean_reward(0).unwrap_or(f64::NAN), log.epoch_mean_reward(last).unwrap_or(f64::NAN));
        }
        Command::Defend { common, model, policy, random_selection } => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let data = build_data(&cfg, seed)?;
            let mut model = load_model(&model, &data, &cfg)?;
            let mut at = cfg.defense.clone();
            if random_selection {
                at.selection = Selection::Random;
            }
            let policy = match (&at.selection, policy) {
                (Selection::Policy, None) => return Err(Error::Config("--policy is required unless --random-selection is given".into())),
                (Selection::Policy, Some(p)) => Some(PolicyNet::load(&p)?),
                (Selection::Random, _) => None,
            };
            let log = adversarial_train(&mut model, policy.as_ref(), &data.graph, &data.split.train, &data.split.val, &at, seeding::derive(seed, "rdat"))?;
            mkdir(&common.out)?;
            save_model(&model, &data, &common.out.join("model"), seed)?;
            log.write_csv(&common.out.join("defense_log.csv"))?;
            if let Some(last) = log.epochs.last() {
                println!("final validation MAE (normalised): clean {:.4}, adversarial {:.4}", last.clean_val_mae, last.adv_val_mae);
            }
        }
        Command::Attack { common, model, strategy, lambda } => {
            let cfg = load_config(&common)?;
            let seed = cfg.seeds[0];
            let data = build_data(&cfg, seed)?;
            let model = load_model(&model, &data, &cfg)?;
            let test = subsample(&data.split.test, cfg.attack.max_test_windows);
            let strategies = strategy.map_or_else(|| cfg.attack.strategies.clone(), |s| vec![s]);
            let lambdas = lambda.map_or_else(|| cfg.attack.lambdas.clone(), |l| vec![l]);
            if lambdas.iter().any(|&l| !(l > 0.0 && l <= 100.0)) {
                return Err(Error::Config("lambda must lie in (0, 100]".into()));
            }
            let (mae, rmse) = clean_metrics(&model, &data, &test)?;
            println!("{:<12} {:>7} {:>10} {:>10}", "attack", "lambda", "MAE", "RMSE");
            println!("{:<12} {:>7} {:>10.4} {:>10.4}", "clean", "-", mae, rmse);
            let mut records = Vec::new();
            for &s in &strategies {
                for &l in &lambdas {
                    let (mae, rmse) = attacked_metrics(&cfg, &model, &data, &test, s, l, seed)?;
                    println!("{:<12} {:>7} {:>10.4} {:>10.4}", s.name(), l, mae, rmse);
                    records.extend(attack_records(&cfg, &model, &data, &test, s, l, seed)?);
                }
            }
            mkdir(&common.out)?;
            write_attack_csv(&common.out.join("attack.csv"), &records)?;
        }
        Command::Report { common } => report(&common, false)?,
        Command::Sweep { common } => report(&common, true)?,
    }
    Ok(())
}

fn report(common: &Common, sweep: bool) -> Result<()> {
    let cfg = load_config(common)?;
    mkdir(&common.out)?;
    let report = run_experiment(&cfg, sweep, Some(&common.out))?;
    for path in emit_report(&report, &common.out)? {
        info!("wrote {}", path.display());
    }
    print!("{}", rdat_core::harness::report_csv(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
