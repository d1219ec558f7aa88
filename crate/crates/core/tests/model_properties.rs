use proptest::prelude::*;

use kdehmm::trainer::{init_model, set_structure};
use kdehmm::{Bandwidth, ContextGraph, KdeAsHmmModel, KernelWeights, TimeSeries};

fn series(rows: &[Vec<f64>]) -> TimeSeries {
    TimeSeries::from_rows(rows.to_vec()).unwrap()
}

fn rows_strategy(len: std::ops::Range<usize>, m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, m), len)
}

fn chain_graph(n: usize) -> ContextGraph {
    let mut g = ContextGraph::naive(n, 3);
    g.parents[0][1] = vec![0];
    g.parents[0][2] = vec![1, 0];
    g.ar_order[0][2] = 1;
    g
}

fn with_weights(base: &KdeAsHmmModel, w: f64) -> KdeAsHmmModel {
    let mut model = base.clone();
    set_structure(&mut model, chain_graph(base.n_states)).unwrap();
    let mut weights = KernelWeights::zeros(&model.graph);
    for (k, row) in weights.0.iter_mut().flatten().enumerate() {
        row.iter_mut().for_each(|x| *x = w * (1.0 + k as f64 * 0.1));
    }
    model.weights = weights;
    model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn zero_weights_equal_naive(train in rows_strategy(6..14, 3), eval in rows_strategy(3..8, 3)) {
        let train = series(&train);
        let eval = series(&eval);
        let naive = init_model(&train, 2, 1, 5).unwrap();
        let zero = with_weights(&naive, 0.0);
        let a = naive.emission_log_matrix(&eval, false).unwrap();
        let b = zero.emission_log_matrix(&eval, false).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn omega_permutation_invariance(train in rows_strategy(4..12, 2), eval in rows_strategy(2..6, 2), rot in 1usize..11) {
        let train = series(&train);
        let eval = series(&eval);
        let model = init_model(&train, 2, 0, 9).unwrap();
        let len = train.len();
        let perm: Vec<usize> = (0..len).map(|k| (k + rot) % len).collect();
        let mut permuted = model.clone();
        permuted.centers = series(&perm.iter().map(|&k| train.row(k).to_vec()).collect::<Vec<_>>());
        for i in 0..2 {
            permuted.omega[i] = perm.iter().map(|&k| model.omega[i][k]).collect();
        }
        let a = model.emission_log_matrix(&eval, false).unwrap();
        let b = permuted.emission_log_matrix(&eval, false).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn center_at_own_instant_is_the_observation(train in rows_strategy(5..10, 3), w in -1.0f64..1.0) {
        let train = series(&train);
        let model = with_weights(&init_model(&train, 1, 1, 0).unwrap(), w);
        for t in 1..train.len() {
            for v in 0..3 {
                let c = model.kernel_center(0, v, t, t, &train).unwrap();
                prop_assert!((c - train.get(t, v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centers_follow_a_common_shift(train in rows_strategy(5..10, 3), w in -1.0f64..1.0, shift in -5.0f64..5.0) {
        let train = series(&train);
        let model = with_weights(&init_model(&train, 1, 1, 0).unwrap(), w);
        let shifted_rows: Vec<Vec<f64>> = (0..train.len()).map(|t| train.row(t).iter().map(|x| x + shift).collect()).collect();
        let shifted = series(&shifted_rows);
        let mut moved = model.clone();
        moved.centers = shifted.clone();
        for t in 1..train.len() {
            for l in 1..train.len() {
                for v in 0..3 {
                    let a = model.kernel_center(0, v, l, t, &train).unwrap();
                    let b = moved.kernel_center(0, v, l, t, &shifted).unwrap();
                    prop_assert!((b - a - shift).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn pointwise_density_matches_matrix() {
    let rows: Vec<Vec<f64>> = (0..12).map(|t| vec![(t as f64 * 0.7).sin(), (t as f64 * 0.3).cos(), t as f64 * 0.1]).collect();
    let s = series(&rows);
    let model = with_weights(&init_model(&s, 2, 1, 4).unwrap(), 0.3);
    for exclude in [false, true] {
        let em = model.emission_log_matrix(&s, exclude).unwrap();
        for t in 1..s.len() {
            for i in 0..2 {
                let v = model.emission_log_density(i, t, &s, exclude).unwrap();
                assert!((v - em.row(t - 1)[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn json_round_trip_and_version_check() {
    let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64, (t * t) as f64 * 0.1, 1.0 / (t as f64 + 1.0)]).collect();
    let s = series(&rows);
    let mut model = with_weights(&init_model(&s, 2, 1, 4).unwrap(), 0.25);
    model.h[1][2] = Bandwidth::new(0.123_456_789_012_345_6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = KdeAsHmmModel::load(&path).unwrap();
    assert_eq!(back, model);
    let text = std::fs::read_to_string(&path).unwrap();
    let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    assert_ne!(bumped, text);
    assert!(matches!(KdeAsHmmModel::from_json(&bumped), Err(kdehmm::Error::Version { found: 2, .. })));
}

#[test]
fn cyclic_graph_rejected() {
    let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![t as f64, (t % 3) as f64, 0.5 * t as f64]).collect();
    let s = series(&rows);
    let mut model = init_model(&s, 1, 1, 0).unwrap();
    let mut g = ContextGraph::naive(1, 3);
    g.parents[0][0] = vec![2];
    g.parents[0][2] = vec![1];
    g.parents[0][1] = vec![0];
    assert!(matches!(set_structure(&mut model, g), Err(kdehmm::Error::Cycle { state: 0, .. })));
}
