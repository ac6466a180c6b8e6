use ndarray::Array3;
use rdat_core::datakit::{prepare, synth_traffic, Prepared, SampleWindow, SplitRatios};
use rdat_core::forecaster::{target_matrix, ArchConfig, Forecaster, Objective};
use rdat_core::perturb::{attack_windows, make_indicator, pgd_attack, pgd_attack_batch, InitMode, PerturbBudget, Strategy};

fn setup() -> (Prepared, Forecaster) {
    let (g, s) = synth_traffic(7, 300, 6).unwrap();
    let data = prepare(g, &s, 12, 12, SplitRatios::default()).unwrap();
    let arch = ArchConfig { blocks: 2, hidden_channels: 6, dilations: vec![1, 2], node_embed_dim: 3, head_channels: 8, ..ArchConfig::default() };
    let model = Forecaster::new(arch, 7, 1, 12, 12, 8).unwrap();
    (data, model)
}

#[test]
fn full_budget_makes_strategies_coincide() {
    let (data, model) = setup();
    let windows: Vec<&SampleWindow> = data.split.test.iter().take(6).collect();
    let budget = PerturbBudget { eta: 7, ..PerturbBudget::default() };
    let reference = attack_windows(&model, &data.graph, &windows, Strategy::Random, &budget, InitMode::Uniform, 42).unwrap();
    for s in [Strategy::Degree, Strategy::PageRank, Strategy::Centrality, Strategy::Tnds] {
        let other = attack_windows(&model, &data.graph, &windows, s, &budget, InitMode::Uniform, 42).unwrap();
        for (a, b) in reference.iter().zip(&other) {
            assert_eq!(a.x_adv, b.x_adv, "{s}");
        }
    }
}

#[test]
fn attacks_never_reduce_the_loss_below_clean() {
    let (data, model) = setup();
    let windows: Vec<&SampleWindow> = data.split.test.iter().take(8).collect();
    let budget = PerturbBudget { eta: 2, ..PerturbBudget::default() };
    let xs: Vec<&Array3<f64>> = windows.iter().map(|w| &w.x).collect();
    let target = target_matrix(&windows.iter().map(|w| &w.y).collect::<Vec<_>>());
    let indicators: Vec<_> = (0..xs.len()).map(|k| make_indicator(&[k % 7, (k + 3) % 7], 7).unwrap()).collect();
    // With a zero start the starting point is the clean input and keep-best returns
    // something at least as damaging.
    let out = pgd_attack_batch(&model, &xs, &target, &indicators, &budget, Objective::Mse, InitMode::Zero, 1).unwrap();
    let clean = model.predict_matrix(&xs).unwrap();
    let n = 7;
    for (k, o) in out.iter().enumerate() {
        let cols = k * n..(k + 1) * n;
        let p = clean.slice(ndarray::s![.., cols.clone()]);
        let t = target.slice(ndarray::s![.., cols]);
        let clean_loss = (&p - &t).mapv(|v| v * v).mean().unwrap();
        assert!(o.loss >= clean_loss - 1e-12, "sample {k}: {} < {clean_loss}", o.loss);
    }
}

#[test]
fn batched_attack_matches_single_window_attack() {
    let (data, model) = setup();
    let budget = PerturbBudget { eta: 3, ..PerturbBudget::default() };
    let w = &data.split.val[2];
    let ind = make_indicator(&[0, 4, 5], 7).unwrap();
    let single = pgd_attack(&model, w, &ind, &budget, Objective::Mse, InitMode::Uniform, 17, "probe").unwrap();
    let target = target_matrix(&[&w.y]);
    let batch = pgd_attack_batch(&model, &[&w.x], &target, std::slice::from_ref(&ind), &budget, Objective::Mse, InitMode::Uniform, 17).unwrap();
    assert_eq!(single.x_adv, batch[0].x_adv);
    assert_eq!(single.base, w.t_origin);
    assert_eq!(single.indicator, ind);
}

#[test]
fn more_steps_do_not_weaken_the_attack() {
    let (data, model) = setup();
    let windows: Vec<&SampleWindow> = data.split.test.iter().take(6).collect();
    let short = PerturbBudget { eta: 3, steps: 1, ..PerturbBudget::default() };
    let long = PerturbBudget { steps: 8, ..short.clone() };
    let a = attack_windows(&model, &data.graph, &windows, Strategy::Degree, &short, InitMode::Zero, 3).unwrap();
    let b = attack_windows(&model, &data.graph, &windows, Strategy::Degree, &long, InitMode::Zero, 3).unwrap();
    let mean = |v: &[rdat_core::perturb::AdversarialSample]| v.iter().map(|s| s.loss).sum::<f64>() / v.len() as f64;
    assert!(mean(&b) >= mean(&a) - 1e-12);
}
