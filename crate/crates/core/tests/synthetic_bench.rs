use std::collections::BTreeMap;

use kdehmm::bench::{run_classification, ClassificationConfig, FitSettings, ModelKind};
use kdehmm::structure::Variant;
use kdehmm::synth::{gen_observations, gen_state_sequence, SyntheticSpec};
use kdehmm::TimeSeries;

fn point_biserial(x: &[f64], flag: &[bool]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (mut s1, mut n1) = (0.0, 0.0);
    let (mut s0, mut n0) = (0.0, 0.0);
    for (v, &f) in x.iter().zip(flag) {
        if f {
            s1 += v;
            n1 += 1.0;
        } else {
            s0 += v;
            n0 += 1.0;
        }
    }
    (s1 / n1 - s0 / n0) / sd * (n1 * n0 / (n * n)).sqrt()
}

#[test]
fn noise_variables_ignore_the_state() {
    let spec = SyntheticSpec::default_benchmark();
    let states = gen_state_sequence(&spec, 3000).unwrap();
    let s = gen_observations(&spec, &states, 21).unwrap();
    for &v in &spec.noise_vars {
        let col = s.column(v);
        for state in 0..spec.n_states() {
            let flag: Vec<bool> = states.iter().map(|&q| q == state).collect();
            let r = point_biserial(&col, &flag);
            assert!(r.abs() < 0.1, "var {v} state {state}: {r}");
            let sq: Vec<f64> = col.iter().map(|x| x * x).collect();
            assert!(point_biserial(&sq, &flag).abs() < 0.1);
        }
    }
}

#[test]
fn pattern_length_reproduces_the_pattern() {
    let spec = SyntheticSpec::default_benchmark();
    let base: usize = spec.pattern.iter().map(|s| s.length).sum();
    let seq = gen_state_sequence(&spec, base).unwrap();
    let expect: Vec<usize> = spec
        .pattern
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.state, s.length))
        .collect();
    assert_eq!(seq, expect);
}

fn separable_classes() -> BTreeMap<String, Vec<TimeSeries>> {
    let a = SyntheticSpec::default_benchmark();
    let mut b = a.clone();
    for st in &mut b.states {
        for v in st.vars.iter_mut().take(5) {
            v.ar = vec![-0.7];
            v.sigma *= 2.0;
        }
    }
    b.validate().unwrap();
    let mut out = BTreeMap::new();
    for (k, (name, spec)) in [("a", a), ("b", b)].into_iter().enumerate() {
        let states = gen_state_sequence(&spec, 90).unwrap();
        let items = (0..6).map(|j| gen_observations(&spec, &states, 50 * k as u64 + j).unwrap()).collect();
        out.insert(name.to_string(), items);
    }
    out
}

#[test]
fn disjoint_specs_are_separable() {
    let mut fit = FitSettings::new(2, 1);
    fit.max_iter = 30;
    let config = ClassificationConfig { model: ModelKind::Kde(Variant::KdeHmm), fit, n_folds: 3, seed: 4 };
    let report = run_classification(&separable_classes(), &config).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert_eq!(report.folds.iter().map(|f| f.n_test).sum::<usize>(), 12);
    assert!(report.mean_accuracy >= 0.9, "{report:?}");
    assert_eq!(report.random_floor, 0.5);
}
