use rdat_core::advtrain::{adversarial_train, at_loss, kd_loss, plain_adversarial_train, snapshot_teacher, AtConfig, Selection, SelectionScope};
use rdat_core::datakit::{prepare, synth_traffic, Prepared, SplitRatios};
use rdat_core::forecaster::{ArchConfig, Forecaster};
use rdat_core::params::AdamConfig;
use rdat_core::policy::{PolicyConfig, PolicyNet};

fn setup() -> (Prepared, Forecaster) {
    let (g, s) = synth_traffic(8, 300, 21).unwrap();
    let data = prepare(g, &s, 12, 12, SplitRatios::default()).unwrap();
    let arch = ArchConfig { blocks: 2, hidden_channels: 6, dilations: vec![1, 2], node_embed_dim: 3, head_channels: 8, ..ArchConfig::default() };
    (data, Forecaster::new(arch, 8, 1, 12, 12, 3).unwrap())
}

fn cfg() -> AtConfig {
    AtConfig {
        epochs: 3,
        batch_size: 4,
        batches_per_epoch: Some(3),
        eval_max_windows: Some(8),
        train_node_ratio: 0.25,
        selection: Selection::Random,
        adam: AdamConfig { lr: 2e-3, ..AdamConfig::default() },
        ..AtConfig::default()
    }
}

#[test]
fn teacher_is_last_epochs_model() {
    let (data, mut model) = setup();
    let log = adversarial_train(&mut model, None, &data.graph, &data.split.train, &data.split.val, &cfg(), 5).unwrap();
    assert_eq!(log.epochs.len(), 3);
    assert_eq!(log.epochs[0].teacher_checksum, None);
    assert_eq!(log.epochs[0].kd_loss, 0.0);
    for pair in log.epochs.windows(2) {
        assert_eq!(pair[1].teacher_checksum.as_deref(), Some(pair[0].end_checksum.as_str()));
        assert!(pair[1].kd_loss > 0.0);
    }
    assert_eq!(log.epochs.last().unwrap().end_checksum, model.params.checksum());
}

#[test]
fn zero_alpha_drops_distillation() {
    let (data, mut model) = setup();
    let c = AtConfig { alpha: 0.0, ..cfg() };
    let log = adversarial_train(&mut model, None, &data.graph, &data.split.train, &data.split.val, &c, 5).unwrap();
    assert!(log.epochs.iter().all(|e| e.kd_loss == 0.0));
}

#[test]
fn plain_training_never_distils() {
    let (data, mut model) = setup();
    let log = plain_adversarial_train(&mut model, &data.graph, &data.split.train, &data.split.val, &cfg(), 5).unwrap();
    assert!(log.epochs.iter().all(|e| e.kd_loss == 0.0 && e.teacher_checksum.is_none()));
    assert!(log.epochs.iter().all(|e| e.omega.len() == 2));
}

#[test]
fn policy_selection_with_epoch_scope_uses_one_set() {
    let (data, mut model) = setup();
    let pc = PolicyConfig { encoder: model.arch.clone(), embed_dim: 8, heads: 2, clip: 10.0 };
    let policy = PolicyNet::new(pc, 8, 1, 12, 4).unwrap();
    let c = AtConfig { selection: Selection::Policy, selection_scope: SelectionScope::Epoch, ..cfg() };
    let log = adversarial_train(&mut model, Some(&policy), &data.graph, &data.split.train, &data.split.val, &c, 9).unwrap();
    for e in &log.epochs {
        assert_eq!(e.omega.len(), 2);
        assert!(e.omega.iter().all(|&v| v < 8));
        assert_ne!(e.omega[0], e.omega[1]);
    }
}

#[test]
fn policy_selection_without_policy_is_rejected() {
    let (data, mut model) = setup();
    let c = AtConfig { selection: Selection::Policy, ..cfg() };
    assert!(adversarial_train(&mut model, None, &data.graph, &data.split.train, &data.split.val, &c, 1).is_err());
}

#[test]
fn runs_repeat_exactly() {
    let (data, model) = setup();
    let run = || {
        let mut m = model.clone();
        let log = adversarial_train(&mut m, None, &data.graph, &data.split.train, &data.split.val, &cfg(), 13).unwrap();
        (m.params.checksum(), log)
    };
    assert_eq!(run(), run());
}

#[test]
fn loss_pieces_combine_as_documented() {
    let pred = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
    let y = ndarray::array![[1.5, 2.0], [2.0, 4.0]];
    let teacher = ndarray::array![[1.0, 1.0], [3.0, 3.0]];
    let kd = kd_loss(&pred, &teacher).unwrap();
    assert!((kd - 0.5).abs() < 1e-12);
    let mse = (0.25 + 1.0) / 4.0;
    assert!((at_loss(&pred, &y, kd, 0.4, true).unwrap() - mse).abs() < 1e-12);
    assert!((at_loss(&pred, &y, kd, 0.4, false).unwrap() - (mse + 0.4 * kd)).abs() < 1e-12);
    assert!(snapshot_teacher(&setup().1, 0).is_err());
}
