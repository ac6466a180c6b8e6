use ndarray::Array3;
use rdat_core::datakit::{prepare, synth_traffic, Prepared, SplitRatios};
use rdat_core::forecaster::{evaluate_windows, subsample, target_matrix, train_clean, ArchConfig, Forecaster, Objective, TrainConfig};
use rdat_core::params::AdamConfig;
use rdat_core::parallel::{self, ExecMode};

fn data() -> Prepared {
    let (g, s) = synth_traffic(6, 400, 2).unwrap();
    prepare(g, &s, 12, 12, SplitRatios::default()).unwrap()
}

fn model(seed: u64) -> Forecaster {
    let arch = ArchConfig { blocks: 2, hidden_channels: 8, dilations: vec![1, 2], node_embed_dim: 4, head_channels: 16, ..ArchConfig::default() };
    Forecaster::new(arch, 6, 1, 12, 12, seed).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, batches_per_epoch: Some(8), eval_max_windows: Some(24), adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, ..TrainConfig::default() }
}

#[test]
fn training_lowers_the_loss() {
    let d = data();
    let mut m = model(1);
    let out = train_clean(&mut m, &d.split.train, &d.split.val, &cfg(5), 3).unwrap();
    let first = out.history.first().unwrap().train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < first, "loss {first} -> {last}");
    let (mae, _) = evaluate_windows(&m, &subsample(&d.split.val, Some(24))).unwrap();
    assert!((mae - out.best_val_mae).abs() < 1e-12, "the best parameters are restored");
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let d = data();
    let mut m = model(1);
    let before = m.params.checksum();
    train_clean(&mut m, &d.split.train, &d.split.val, &cfg(0), 3).unwrap();
    assert_eq!(m.params.checksum(), before);
}

#[test]
fn same_seed_same_model() {
    let d = data();
    let (mut a, mut b) = (model(4), model(4));
    let oa = train_clean(&mut a, &d.split.train, &d.split.val, &cfg(2), 9).unwrap();
    let ob = train_clean(&mut b, &d.split.train, &d.split.val, &cfg(2), 9).unwrap();
    assert_eq!(oa.best_val_mae, ob.best_val_mae);
    assert_eq!(a.params.checksum(), b.params.checksum());
}

#[test]
fn parallel_and_sequential_modes_agree_bitwise() {
    let d = data();
    let m = model(2);
    let xs: Vec<&Array3<f64>> = d.split.train.iter().take(20).map(|w| &w.x).collect();
    let target = target_matrix(&d.split.train.iter().take(20).map(|w| &w.y).collect::<Vec<_>>());
    let run = |mode| {
        parallel::set_mode(mode);
        let pred = m.predict_matrix(&xs).unwrap();
        let (loss, grads) = m.loss_and_grads(&xs, &target, Objective::Mse).unwrap();
        (pred, loss, grads)
    };
    let seq = run(ExecMode::Sequential);
    let par = run(ExecMode::Parallel);
    assert_eq!(seq.0, par.0);
    assert_eq!(seq.1.to_bits(), par.1.to_bits());
    assert_eq!(seq.2, par.2);
}

#[test]
fn checkpoint_survives_a_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(5);
    let mut meta = toml::Table::new();
    meta.insert("note".into(), toml::Value::String("kept".into()));
    m.save(dir.path(), 5, meta).unwrap();
    let (back, meta) = Forecaster::load(dir.path()).unwrap();
    assert_eq!(back.params.checksum(), m.params.checksum());
    assert_eq!(meta.get("note").and_then(|v| v.as_str()), Some("kept"));
    let x = data().split.test[0].x.clone();
    assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
}
