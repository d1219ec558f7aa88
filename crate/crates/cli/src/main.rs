use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use kdehmm::bench::{classify, run_benchmark, BenchConfig, FitSettings, ModelKind, TrainedModel};
use kdehmm::structure::{sem_fit_from, SemConfig, Variant};
use kdehmm::synth::{gen_observations, gen_state_sequence, SyntheticSpec};
use kdehmm::trainer::{init_model, init_omega_from_labels, set_structure, EmConfig};
use kdehmm::{log_likelihood, viterbi, ContextGraph, ErrorKind, KdeAsHmmModel, TimeSeries};

#[derive(Parser, Debug)]
#[command(name = "kdehmm", version, about = "Kernel-density asymmetric hidden Markov models")]
struct Cli {
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Log level for the stderr log stream.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a CSV series.
    Train(TrainArgs),
    /// Held-out log-likelihood of a series.
    Eval(EvalArgs),
    /// Most probable hidden state per instant.
    Segment(SegmentArgs),
    /// Pick the class model with the highest log-likelihood.
    Classify(ClassifyArgs),
    /// Sample a synthetic series and its hidden states.
    Synth(SynthArgs),
    /// Compare model variants on synthetic data.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    data: PathBuf,
    #[arg(long, default_value_t = 2)]
    states: usize,
    #[arg(long, default_value_t = 1)]
    pstar: usize,
    #[arg(long, default_value = "kde-as")]
    #[serde(serialize_with = "as_display")]
    variant: Variant,
    /// Fixed starting structure (JSON graph).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Label column used to initialize the kernel weights.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long, default_value_t = 1)]
    sem_rounds: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Fit report path; defaults to `<out>.report.json`.
    #[arg(long)]
    #[serde(skip)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    model: PathBuf,
    data: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SegmentArgs {
    model: PathBuf,
    data: PathBuf,
    /// State CSV path; stdout when absent.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ClassifyArgs {
    /// Directory holding one `<class>.json` model per class.
    models: PathBuf,
    data: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// Generator spec; the bundled default when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Hidden-state CSV; defaults to `<out stem>_states.csv`.
    #[arg(long)]
    #[serde(skip)]
    states_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct BenchmarkArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [350, 700, 1050, 1400, 1750, 2100, 2450])]
    train_lengths: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    #[arg(long, default_value_t = 1400)]
    test_length: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "gaussian-hmm,kde-hmm,kde-ar,kde-bn,kde-as"
    )]
    #[serde(serialize_with = "all_display")]
    models: Vec<ModelKind>,
    /// Hidden states; the spec's count when absent.
    #[arg(long)]
    states: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pstar: usize,
    #[arg(long, default_value_t = 1)]
    sem_rounds: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    out_dir: PathBuf,
    /// Also write mean/std loglik against train length per model.
    #[arg(long)]
    plot_data: bool,
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn all_display<T: std::fmt::Display, S: serde::Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.to_string()))
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Tool version, command, seed, flag echo and input hashes.
fn provenance(command: &str, seed: Option<u64>, flags: &impl Serialize, inputs: &[(&str, &Path)]) -> anyhow::Result<Value> {
    let mut hashes = BTreeMap::new();
    for (role, path) in inputs {
        hashes.insert(role.to_string(), sha256_file(path)?);
    }
    let mut flags = serde_json::to_value(flags)?;
    // inputs are identified by content, not by path
    if let Value::Object(map) = &mut flags {
        for (role, _) in inputs {
            map.remove(*role);
        }
    }
    Ok(json!({
        "tool": "kdehmm",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "flags": flags,
        "input_sha256": hashes,
    }))
}

fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let series = TimeSeries::load_csv(&args.data, args.labels.as_deref())?;
    let mut em = EmConfig::new(args.states, args.pstar);
    em.max_iter = args.max_iter;
    em.rel_tol = args.tol;
    em.seed = args.seed;
    let mut model = init_model(&series, args.states, args.pstar, args.seed)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("data", &args.data)];
    if let Some(path) = &args.graph {
        let graph = ContextGraph::load(path)?;
        set_structure(&mut model, graph.clone())?;
        em.graph = Some(graph);
        inputs.push(("graph", path));
    }
    let mut label_map = BTreeMap::new();
    if let Some(labels) = series.labels() {
        let distinct: std::collections::BTreeSet<&String> = labels.iter().collect();
        if distinct.len() != args.states {
            bail!(kdehmm::Error::Invariant(format!(
                "{} distinct labels for {} states",
                distinct.len(),
                args.states
            )));
        }
        label_map = distinct.into_iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        init_omega_from_labels(&mut model, labels, &label_map)?;
    }
    let mut sem = SemConfig::new(em, args.variant);
    sem.sem_rounds = args.sem_rounds;
    let (model, report) = sem_fit_from(model, &series, &sem)?;

    let mut prov = provenance("train", Some(args.seed), args, &inputs)?;
    if !label_map.is_empty() {
        prov["label_states"] = json!(label_map);
    }
    model.save_with_provenance(&args.out, Some(&prov))?;
    let report_path = args.report.clone().unwrap_or_else(|| sidecar_report(&args.out));
    write_json(&report_path, &json!({ "provenance": prov, "report": report }))?;
    let last = report.loglik_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} states on {} rows: {} iterations, loglik/datum {last:.6}, {} structure moves",
        model.n_states,
        series.len(),
        report.iterations,
        report.moves.len()
    );
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn sidecar_report(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".report.json");
    PathBuf::from(name)
}

fn load_for(model: &KdeAsHmmModel, data: &Path) -> anyhow::Result<TimeSeries> {
    let series = TimeSeries::load_csv(data, None)?;
    if series.feature_names() != model.centers.feature_names() {
        bail!(kdehmm::Error::Invariant(format!(
            "data columns {:?} differ from model columns {:?}",
            series.feature_names(),
            model.centers.feature_names()
        )));
    }
    Ok(series)
}

fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let model = KdeAsHmmModel::load(&args.model)?;
    let series = load_for(&model, &args.data)?;
    let loglik = log_likelihood(&model, &series)?;
    let scored = series.len() - model.p_star;
    let out = json!({
        "provenance": provenance("eval", None, args, &[("model", &args.model), ("data", &args.data)])?,
        "loglik": loglik,
        "length": series.len(),
        "scored_instants": scored,
        "loglik_per_datum": loglik / scored as f64,
    });
    emit_json(&out, args.out.as_deref())
}

fn emit_json(value: &Value, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

fn segment(args: &SegmentArgs) -> anyhow::Result<()> {
    let model = KdeAsHmmModel::load(&args.model)?;
    let series = load_for(&model, &args.data)?;
    let path = viterbi(&model, &series)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["t", "state"])?;
        for (k, s) in path.iter().enumerate() {
            w.write_record([(k + model.p_star).to_string(), s.to_string()])?;
        }
        w.flush()?;
    }
    match &args.out {
        Some(out) => {
            fs::write(out, &buf)?;
            let prov = provenance("segment", None, args, &[("model", &args.model), ("data", &args.data)])?;
            write_json(&sidecar(out), &prov)?;
        }
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    Ok(())
}

fn classify_cmd(args: &ClassifyArgs) -> anyhow::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(&args.models)
        .with_context(|| format!("listing {}", args.models.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.retain(|p| p.extension().is_some_and(|e| e == "json") && !is_auxiliary(p));
    entries.sort();
    if entries.is_empty() {
        bail!(kdehmm::Error::Invariant(format!("no class models in {}", args.models.display())));
    }
    let mut models = BTreeMap::new();
    let mut hashes = BTreeMap::new();
    for path in &entries {
        let class = path.file_stem().unwrap().to_string_lossy().into_owned();
        models.insert(class.clone(), TrainedModel::Kde(KdeAsHmmModel::load(path)?));
        hashes.insert(class, sha256_file(path)?);
    }
    let series = TimeSeries::load_csv(&args.data, None)?;
    let result = classify(&models, &series)?;
    let mut prov = provenance("classify", None, args, &[("data", &args.data)])?;
    prov["model_sha256"] = json!(hashes);
    let out = json!({
        "provenance": prov,
        "predicted": result.predicted,
        "tie_break": "lexicographic class name",
        "tied_with": result.tied_with,
        "logliks": result.logliks,
    });
    emit_json(&out, args.out.as_deref())
}

fn is_auxiliary(path: &Path) -> bool {
    let name = path.file_name().unwrap_or_default().to_string_lossy();
    name.ends_with(".report.json") || name.ends_with(".meta.json")
}

fn load_spec(path: Option<&Path>) -> anyhow::Result<SyntheticSpec> {
    Ok(match path {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default_benchmark(),
    })
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let spec = load_spec(args.spec.as_deref())?;
    let states = gen_state_sequence(&spec, args.length)?;
    let series = gen_observations(&spec, &states, args.seed)?;
    let plain = TimeSeries::from_flat(series.feature_names().to_vec(), series.values().to_vec())?;
    plain.save_csv(&args.out)?;
    let states_path = args.states_out.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().unwrap_or_default().to_string_lossy();
        args.out.with_file_name(format!("{stem}_states.csv"))
    });
    let mut w = csv::Writer::from_path(&states_path)?;
    w.write_record(["t", "state"])?;
    for (t, s) in states.iter().enumerate() {
        w.write_record([t.to_string(), s.to_string()])?;
    }
    w.flush()?;
    let inputs: Vec<(&str, &Path)> = args.spec.iter().map(|p| ("spec", p.as_path())).collect();
    let prov = provenance("synth", Some(args.seed), args, &inputs)?;
    write_json(&sidecar(&args.out), &prov)?;
    println!("wrote {} rows to {}", series.len(), args.out.display());
    Ok(())
}

fn benchmark(args: &BenchmarkArgs) -> anyhow::Result<()> {
    let spec = load_spec(args.spec.as_deref())?;
    let mut fit = FitSettings::new(args.states.unwrap_or(spec.n_states()), args.pstar);
    fit.max_iter = args.max_iter;
    fit.rel_tol = args.tol;
    fit.sem_rounds = args.sem_rounds;
    let config = BenchConfig {
        train_lengths: args.train_lengths.clone(),
        n_test: args.n_test,
        test_length: args.test_length,
        models: args.models.clone(),
        fit,
        seed: args.seed,
    };
    let report = run_benchmark(&spec, &config)?;
    fs::create_dir_all(&args.out_dir)?;
    report.write_csv(fs::File::create(args.out_dir.join("report.csv"))?)?;
    report.write_timings_csv(fs::File::create(args.out_dir.join("timings.csv"))?)?;
    report.write_test_logliks_csv(fs::File::create(args.out_dir.join("test_logliks.csv"))?)?;
    if args.plot_data {
        report.write_plot_data(args.out_dir.join("plot_data"))?;
    }
    let inputs: Vec<(&str, &Path)> = args.spec.iter().map(|p| ("spec", p.as_path())).collect();
    let mut summary = report.summary_json();
    summary["provenance"] = provenance("benchmark", Some(args.seed), args, &inputs)?;
    write_json(&args.out_dir.join("summary.json"), &summary)?;
    for row in &report.rows {
        println!(
            "T={:<5} {:<13} mean {:>10.4}  std {:>8.4}",
            row.train_length, row.model, row.mean_loglik, row.std_loglik
        );
    }
    println!("not included: {}", report.unavailable_baselines.join(", "));
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Segment(a) => segment(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<kdehmm::Error>().map(kdehmm::Error::kind) {
        Some(ErrorKind::Invariant) => 2,
        Some(ErrorKind::Numerical) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
