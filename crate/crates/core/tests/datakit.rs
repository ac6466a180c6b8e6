use ndarray::{array, Array2};
use rdat_core::datakit::{betweenness_scores, degree_scores, make_windows, pagerank_scores, prepare, synth_traffic, SplitRatios, TrafficGraph};

fn weighted_five() -> TrafficGraph {
    let adj: Array2<f64> = array![[0., 2., 0., 0., 1.], [2., 0., 1., 0., 0.], [0., 1., 0., 3., 0.5], [0., 0., 3., 0., 1.], [1., 0., 0.5, 1., 0.]];
    TrafficGraph::new(adj, (0..5).map(|i| format!("n{i}")).collect()).unwrap()
}

// Reference values come from networkx 3.4 (pagerank with alpha 0.85, tol 1e-14;
// betweenness with edge length 1/weight, then divided by the total).
#[test]
fn pagerank_matches_reference_on_weighted_graph() {
    let want = [0.186169501881083, 0.18300504061889478, 0.25151817998615883, 0.22499361418921007, 0.15431366332465316];
    let got = pagerank_scores(&weighted_five(), 0.85, 1000);
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-6, "{got:?}");
    }
}

#[test]
fn betweenness_matches_reference_on_weighted_graph() {
    let want = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 0.0];
    let got = betweenness_scores(&weighted_five());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-9, "{got:?}");
    }
}

#[test]
fn degree_is_normalised_row_sum() {
    let got = degree_scores(&weighted_five());
    let total = 3.0 + 3.0 + 4.5 + 4.0 + 2.5;
    assert!((got[2] - 4.5 / total).abs() < 1e-12);
    assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn synthetic_data_is_reproducible_and_connected() {
    let (g1, s1) = synth_traffic(10, 300, 4).unwrap();
    let (g2, s2) = synth_traffic(10, 300, 4).unwrap();
    assert_eq!(g1.adjacency, g2.adjacency);
    assert_eq!(s1.values, s2.values);
    assert!(g1.is_connected());
    let (_, s3) = synth_traffic(10, 300, 5).unwrap();
    assert_ne!(s1.values, s3.values);
}

#[test]
fn prepared_split_is_chronological_and_normalised() {
    let (g, s) = synth_traffic(6, 500, 1).unwrap();
    let total = make_windows(&s, 12, 12).unwrap().len();
    let data = prepare(g, &s, 12, 12, SplitRatios::default()).unwrap();
    let sp = &data.split;
    assert_eq!(sp.train.len() + sp.val.len() + sp.test.len(), total);
    let last_train = sp.train.last().unwrap().t_origin;
    assert!(sp.val.iter().all(|w| w.t_origin > last_train));
    assert!(sp.test.iter().all(|w| w.t_origin > sp.val.last().unwrap().t_origin));
    // The scaler is fitted on training timesteps, so training inputs stay inside [0, 1].
    for w in &sp.train {
        assert!(w.x.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }
    let v = 0.37;
    assert!((data.scaler.apply(0, data.denormalize(v)) - v).abs() < 1e-12);
}
