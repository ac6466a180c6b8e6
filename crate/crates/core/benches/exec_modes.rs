//! Sequential against rayon execution for the two hot paths: batched forward
//! passes and PGD attacks.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array3;
use rdat_core::datakit::{prepare, synth_traffic, SplitRatios};
use rdat_core::forecaster::{target_matrix, ArchConfig, Forecaster, Objective};
use rdat_core::parallel::{self, ExecMode};
use rdat_core::perturb::{make_indicator, pgd_attack_batch, InitMode, PerturbBudget};

fn bench(c: &mut Criterion) {
    let (g, s) = synth_traffic(20, 600, 1).unwrap();
    let data = prepare(g, &s, 12, 12, SplitRatios::default()).unwrap();
    let arch = ArchConfig { blocks: 4, hidden_channels: 16, dilations: vec![1, 2, 1, 2], node_embed_dim: 10, head_channels: 32, ..ArchConfig::default() };
    let model = Forecaster::new(arch, 20, 1, 12, 12, 1).unwrap();
    let windows = &data.split.train[..32];
    let xs: Vec<&Array3<f64>> = windows.iter().map(|w| &w.x).collect();
    let target = target_matrix(&windows.iter().map(|w| &w.y).collect::<Vec<_>>());
    let indicators: Vec<_> = (0..xs.len()).map(|k| make_indicator(&[k % 20, (k + 7) % 20, (k + 13) % 20, (k + 17) % 20], 20).unwrap()).collect();
    let budget = PerturbBudget { eta: 4, ..PerturbBudget::default() };

    let mut group = c.benchmark_group("exec_modes");
    group.sample_size(10);
    for (name, mode) in [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)] {
        parallel::set_mode(mode);
        group.bench_with_input(BenchmarkId::new("predict_matrix", name), &mode, |b, _| b.iter(|| model.predict_matrix(&xs).unwrap()));
        group.bench_with_input(BenchmarkId::new("pgd_attack_batch", name), &mode, |b, _| {
            b.iter(|| pgd_attack_batch(&model, &xs, &target, &indicators, &budget, Objective::Mse, InitMode::Uniform, 3).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
