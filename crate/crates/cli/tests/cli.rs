use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use kdehmm::bench::{classify, TrainedModel};
use kdehmm::{KdeAsHmmModel, TimeSeries};

fn kdehmm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdehmm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = kdehmm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, name: &str, length: usize, seed: u64) {
    ok(dir, &["synth", "--length", &length.to_string(), "--seed", &seed.to_string(), "--out", name]);
}

fn train(dir: &Path, data: &str, out: &str, extra: &[&str]) -> serde_json::Value {
    let mut args = vec!["train", data, "--states", "3", "--max-iter", "15", "--out", out];
    args.extend_from_slice(extra);
    ok(dir, &args);
    json(&dir.join(format!("{out}.report.json")))
}

#[test]
fn synth_writes_data_states_and_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "x.csv", 120, 8);
    let s = TimeSeries::load_csv(d.join("x.csv"), None).unwrap();
    assert_eq!((s.len(), s.n_features()), (120, 7));
    let states = std::fs::read_to_string(d.join("x_states.csv")).unwrap();
    assert_eq!(states.lines().count(), 121);
    let meta = json(&d.join("x.csv.meta.json"));
    assert_eq!(meta["seed"], 8);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn train_is_reproducible_and_records_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "x.csv", 150, 1);
    train(d, "x.csv", "a.json", &["--seed", "4"]);
    train(d, "x.csv", "b.json", &["--seed", "4"]);
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
    let model = json(&d.join("a.json"));
    let prov = &model["provenance"];
    assert_eq!(prov["seed"], 4);
    assert_eq!(prov["flags"]["variant"], "kde-as");
    assert_eq!(prov["input_sha256"]["data"].as_str().unwrap().len(), 64);
    let report = json(&d.join("a.json.report.json"));
    assert!(report["report"]["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn kde_hmm_variant_logs_no_moves() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "x.csv", 150, 2);
    let report = train(d, "x.csv", "m.json", &["--variant", "kde-hmm"]);
    assert_eq!(report["report"]["moves"].as_array().unwrap().len(), 0);
}

#[test]
fn given_graph_with_zero_rounds_is_kept() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "x.csv", 150, 3);
    let graph = kdehmm::SyntheticSpec::default_benchmark().graph();
    std::fs::write(d.join("g.json"), serde_json::to_string(&graph).unwrap()).unwrap();
    train(d, "x.csv", "m.json", &["--graph", "g.json", "--sem-rounds", "0"]);
    let model = KdeAsHmmModel::load(d.join("m.json")).unwrap();
    assert_eq!(model.graph, graph);
}

#[test]
fn labels_initialize_training() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "x.csv", 150, 4);
    let data = std::fs::read_to_string(d.join("x.csv")).unwrap();
    let states = std::fs::read_to_string(d.join("x_states.csv")).unwrap();
    let mut merged = String::new();
    for (k, (row, st)) in data.lines().zip(states.lines()).enumerate() {
        let label = if k == 0 { "regime".to_string() } else { format!("s{}", st.split(',').nth(1).unwrap()) };
        merged.push_str(&format!("{row},{label}\n"));
    }
    std::fs::write(d.join("l.csv"), merged).unwrap();
    ok(d, &["train", "l.csv", "--labels", "regime", "--states", "3", "--max-iter", "5", "--out", "m.json"]);
    let model = json(&d.join("m.json"));
    assert_eq!(model["provenance"]["label_states"]["s2"], 2);
    let out = kdehmm(d, &["train", "l.csv", "--labels", "regime", "--states", "2", "--out", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_prefers_intact_dynamics_over_shuffled_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "x.csv", 200, 5);
    train(d, "x.csv", "m.json", &[]);
    let text = std::fs::read_to_string(d.join("x.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    // deterministic shuffle by a fixed stride coprime with the length
    let n = lines.len();
    let shuffled: Vec<&str> = (0..n).map(|k| lines[(k * 37) % n]).collect();
    std::fs::write(d.join("s.csv"), format!("{header}\n{}\n", shuffled.join("\n"))).unwrap();
    ok(d, &["eval", "m.json", "x.csv", "--out", "own.json"]);
    ok(d, &["eval", "m.json", "s.csv", "--out", "shuf.json"]);
    let own = json(&d.join("own.json"))["loglik_per_datum"].as_f64().unwrap();
    let shuf = json(&d.join("shuf.json"))["loglik_per_datum"].as_f64().unwrap();
    assert!(own >= shuf, "{own} < {shuf}");
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "x.csv", 120, 6);
    train(d, "x.csv", "m.json", &["--variant", "kde-hmm"]);
    std::fs::write(d.join("bad.csv"), "x0,x1\n1.0,abc\n").unwrap();
    assert_eq!(kdehmm(d, &["eval", "m.json", "bad.csv"]).status.code(), Some(1));
    assert_eq!(kdehmm(d, &["train"]).status.code(), Some(1));
    assert_eq!(kdehmm(d, &["train", "x.csv", "--variant", "nope", "--out", "z.json"]).status.code(), Some(1));
    std::fs::write(d.join("narrow.csv"), "x0,x1\n1.0,2.0\n3.0,4.0\n5.0,6.0\n").unwrap();
    assert_eq!(kdehmm(d, &["eval", "m.json", "narrow.csv"]).status.code(), Some(2));
    let mut cyclic = kdehmm::ContextGraph::naive(3, 7);
    cyclic.parents[0][0] = vec![1];
    cyclic.parents[0][1] = vec![0];
    std::fs::write(d.join("cyc.json"), serde_json::to_string(&cyclic).unwrap()).unwrap();
    assert_eq!(kdehmm(d, &["train", "x.csv", "--graph", "cyc.json", "--out", "c.json"]).status.code(), Some(2));
    assert!(kdehmm(d, &["--help"]).status.success());
}

#[test]
fn segment_writes_one_state_per_scored_instant() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "x.csv", 140, 7);
    train(d, "x.csv", "m.json", &["--variant", "kde-hmm"]);
    let out = ok(d, &["segment", "m.json", "x.csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,state");
    assert_eq!(lines.len(), 140);
    assert!(lines[1].starts_with("1,"));
    let model = KdeAsHmmModel::load(d.join("m.json")).unwrap();
    let s = TimeSeries::load_csv(d.join("x.csv"), None).unwrap();
    let path = kdehmm::viterbi(&model, &s).unwrap();
    for (line, state) in lines[1..].iter().zip(&path) {
        assert_eq!(line.split(',').nth(1).unwrap(), state.to_string());
    }
}

#[test]
fn classify_agrees_with_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("models")).unwrap();
    synth(d, "a.csv", 150, 10);
    synth(d, "b.csv", 150, 11);
    synth(d, "q.csv", 80, 12);
    train(d, "a.csv", "models/alpha.json", &["--variant", "kde-hmm"]);
    train(d, "b.csv", "models/beta.json", &["--variant", "kde-hmm", "--seed", "1"]);
    ok(d, &["classify", "models", "q.csv", "--out", "c.json"]);
    let got = json(&d.join("c.json"));
    let models: BTreeMap<String, TrainedModel> = ["alpha", "beta"]
        .iter()
        .map(|c| {
            let m = KdeAsHmmModel::load(d.join(format!("models/{c}.json"))).unwrap();
            (c.to_string(), TrainedModel::Kde(m))
        })
        .collect();
    let expect = classify(&models, &TimeSeries::load_csv(d.join("q.csv"), None).unwrap()).unwrap();
    assert_eq!(got["predicted"], expect.predicted.as_str());
    for (class, ll) in &expect.logliks {
        assert_eq!(got["logliks"][class].as_f64().unwrap(), *ll);
    }
}

#[test]
fn classify_single_model_and_ties() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("one")).unwrap();
    std::fs::create_dir(d.join("twins")).unwrap();
    synth(d, "a.csv", 120, 13);
    train(d, "a.csv", "one/only.json", &["--variant", "kde-hmm"]);
    let out = ok(d, &["classify", "one", "a.csv"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["predicted"], "only");
    std::fs::copy(d.join("one/only.json"), d.join("twins/zeta.json")).unwrap();
    std::fs::copy(d.join("one/only.json"), d.join("twins/beta.json")).unwrap();
    let out = ok(d, &["classify", "twins", "a.csv"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["predicted"], "beta");
    assert_eq!(v["tied_with"][0], "zeta");
}

#[test]
fn benchmark_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "benchmark", "--train-lengths", "100", "--n-test", "2", "--test-length", "60", "--models", "gaussian-hmm",
            "--max-iter", "5", "--out-dir", "b", "--plot-data",
        ],
    );
    let report = std::fs::read_to_string(d.join("b/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(d.join("b/plot_data/loglik_vs_t_gaussian-hmm.csv").exists());
    let summary = json(&d.join("b/summary.json"));
    assert_eq!(summary["unavailable_baselines"][0], "ar-aslg-hmm");
    assert_eq!(summary["provenance"]["command"], "benchmark");
}
