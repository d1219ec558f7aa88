//! Model-comparison harness over synthetic data and max-likelihood
//! classification.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{fit_gaussian_hmm, GaussianHmm};
use crate::graph::ContextGraph;
use crate::inference::{log_likelihood, HiddenMarkovModel};
use crate::model::KdeAsHmmModel;
use crate::series::TimeSeries;
use crate::structure::{sem_fit, SemConfig, Variant};
use crate::synth::{gen_observations, gen_state_sequence, SyntheticSpec};
use crate::trainer::{EmConfig, FitReport};

/// Baselines that are not part of the harness.
pub const UNAVAILABLE_BASELINES: &[&str] = &["ar-aslg-hmm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelKind {
    GaussianHmm,
    Kde(Variant),
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::GaussianHmm,
        ModelKind::Kde(Variant::KdeHmm),
        ModelKind::Kde(Variant::KdeAr),
        ModelKind::Kde(Variant::KdeBn),
        ModelKind::Kde(Variant::KdeAs),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GaussianHmm => "gaussian-hmm",
            ModelKind::Kde(v) => v.name(),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "gaussian-hmm" {
            return Ok(ModelKind::GaussianHmm);
        }
        s.parse::<Variant>().map(ModelKind::Kde)
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Gaussian(GaussianHmm),
    Kde(KdeAsHmmModel),
}

impl TrainedModel {
    pub fn as_hmm(&self) -> &dyn HiddenMarkovModel {
        match self {
            TrainedModel::Gaussian(m) => m,
            TrainedModel::Kde(m) => m,
        }
    }

    pub fn log_likelihood(&self, series: &TimeSeries) -> Result<f64> {
        log_likelihood(self.as_hmm(), series)
    }

    /// Log-likelihood over the number of scored instants.
    pub fn loglik_per_datum(&self, series: &TimeSeries) -> Result<f64> {
        let scored = series.len() - self.as_hmm().p_star();
        Ok(self.log_likelihood(series)? / scored as f64)
    }
}

/// Training settings shared by every model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub n_states: usize,
    pub p_star: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub sem_rounds: usize,
    #[serde(default)]
    pub graph: Option<ContextGraph>,
}

impl FitSettings {
    pub fn new(n_states: usize, p_star: usize) -> Self {
        FitSettings {
            n_states,
            p_star,
            max_iter: 100,
            rel_tol: 1e-6,
            sem_rounds: 1,
            graph: None,
        }
    }
}

pub fn fit_model(
    kind: ModelKind,
    series: &TimeSeries,
    settings: &FitSettings,
    seed: u64,
) -> Result<(TrainedModel, FitReport)> {
    match kind {
        ModelKind::GaussianHmm => {
            let (m, r) = fit_gaussian_hmm(
                series,
                settings.n_states,
                settings.p_star,
                settings.max_iter,
                settings.rel_tol,
                seed,
            )?;
            Ok((TrainedModel::Gaussian(m), r))
        }
        ModelKind::Kde(variant) => {
            let mut em = EmConfig::new(settings.n_states, settings.p_star);
            em.max_iter = settings.max_iter;
            em.rel_tol = settings.rel_tol;
            em.seed = seed;
            em.graph = settings.graph.clone();
            let mut sem = SemConfig::new(em, variant);
            sem.sem_rounds = settings.sem_rounds;
            let (m, r) = sem_fit(series, &sem)?;
            Ok((TrainedModel::Kde(m), r))
        }
    }
}

/// SplitMix64 step over `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const FIT_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub train_lengths: Vec<usize>,
    pub n_test: usize,
    pub test_length: usize,
    pub models: Vec<ModelKind>,
    pub fit: FitSettings,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(spec: &SyntheticSpec) -> Self {
        BenchConfig {
            train_lengths: vec![350, 700, 1050, 1400, 1750, 2100, 2450],
            n_test: 100,
            test_length: 1400,
            models: ModelKind::ALL.to_vec(),
            fit: FitSettings::new(spec.n_states(), spec.max_ar().max(1)),
            seed: 0,
        }
    }
}

/// One (train length, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub train_length: usize,
    pub model: ModelKind,
    pub mean_loglik: f64,
    pub std_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_arcs: usize,
    pub wall_time_s: f64,
    /// Held-out per-datum log-likelihood of every test series.
    pub test_logliks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub unavailable_baselines: Vec<String>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_benchmark(spec: &SyntheticSpec, config: &BenchConfig) -> Result<BenchReport> {
    spec.validate()?;
    if config.n_test == 0 || config.models.is_empty() || config.train_lengths.is_empty() {
        return Err(Error::Invariant(
            "benchmark needs train lengths, models and test series".into(),
        ));
    }
    let test_states = gen_state_sequence(spec, config.test_length)?;
    let tests: Vec<TimeSeries> = (0..config.n_test)
        .map(|j| gen_observations(spec, &test_states, derive_seed(config.seed, TEST_STREAM, j as u64)))
        .collect::<Result<_>>()?;
    let trains: Vec<TimeSeries> = config
        .train_lengths
        .iter()
        .map(|&len| {
            let states = gen_state_sequence(spec, len)?;
            gen_observations(spec, &states, derive_seed(config.seed, TRAIN_STREAM, len as u64))
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, ModelKind)> = (0..config.train_lengths.len())
        .flat_map(|k| config.models.iter().map(move |&m| (k, m)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(k, kind)| {
            let len = config.train_lengths[k];
            let fit_seed = derive_seed(config.seed, FIT_STREAM, len as u64);
            let (model, report) = fit_model(kind, &trains[k], &config.fit, fit_seed)?;
            log::info!("{kind} trained on T={len} in {:.2}s", report.wall_time_s);
            let test_logliks = tests
                .iter()
                .map(|s| model.loglik_per_datum(s))
                .collect::<Result<Vec<_>>>()?;
            let (mean_loglik, std_loglik) = mean_std(&test_logliks);
            let n_arcs = match &model {
                TrainedModel::Kde(m) => (0..m.n_states).map(|i| m.graph.n_arcs(i)).sum(),
                TrainedModel::Gaussian(_) => 0,
            };
            Ok(BenchRow {
                train_length: len,
                model: kind,
                mean_loglik,
                std_loglik,
                iterations: report.iterations,
                converged: report.converged,
                n_arcs,
                wall_time_s: report.wall_time_s,
                test_logliks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        config: config.clone(),
        rows,
        unavailable_baselines: UNAVAILABLE_BASELINES.iter().map(|s| s.to_string()).collect(),
    })
}

impl BenchReport {
    pub fn row(&self, train_length: usize, model: ModelKind) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.train_length == train_length && r.model == model)
    }

    /// One line per cell; wall time is left to [`BenchReport::write_timings_csv`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["train_length", "model", "mean_loglik", "std_loglik", "iterations", "converged", "n_arcs"])?;
        for r in &self.rows {
            w.write_record([
                r.train_length.to_string(),
                r.model.to_string(),
                r.mean_loglik.to_string(),
                r.std_loglik.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.n_arcs.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timings_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["train_length", "model", "seconds"])?;
        for r in &self.rows {
            w.write_record([r.train_length.to_string(), r.model.to_string(), r.wall_time_s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Raw per-series scores, one column per cell.
    pub fn write_test_logliks_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["test_series".to_string()];
        header.extend(self.rows.iter().map(|r| format!("{}@{}", r.model, r.train_length)));
        w.write_record(&header)?;
        for j in 0..self.config.n_test {
            let mut rec = vec![j.to_string()];
            rec.extend(self.rows.iter().map(|r| r.test_logliks[j].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean and std of held-out loglik against train length, one file per model.
    pub fn write_plot_data(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir.as_ref())?;
        let mut written = Vec::new();
        for kind in &self.config.models {
            let path = dir.as_ref().join(format!("loglik_vs_t_{kind}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["train_length", "mean_loglik", "std_loglik"])?;
            for r in self.rows.iter().filter(|r| r.model == *kind) {
                w.write_record([r.train_length.to_string(), r.mean_loglik.to_string(), r.std_loglik.to_string()])?;
            }
            w.flush()?;
            written.push(path);
        }
        Ok(written)
    }

    /// JSON summary without timings or raw scores.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "unavailable_baselines": self.unavailable_baselines,
            "rows": self.rows.iter().map(|r| serde_json::json!({
                "train_length": r.train_length,
                "model": r.model,
                "mean_loglik": r.mean_loglik,
                "std_loglik": r.std_loglik,
                "iterations": r.iterations,
                "converged": r.converged,
                "n_arcs": r.n_arcs,
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub predicted: String,
    pub logliks: BTreeMap<String, f64>,
    /// Classes sharing the maximum besides the prediction.
    pub tied_with: Vec<String>,
}

/// Class of the highest log-likelihood; ties go to the first name.
pub fn classify(models: &BTreeMap<String, TrainedModel>, series: &TimeSeries) -> Result<Classification> {
    if models.is_empty() {
        return Err(Error::Invariant("no class models".into()));
    }
    let logliks: BTreeMap<String, f64> = models
        .iter()
        .map(|(c, m)| Ok((c.clone(), m.log_likelihood(series)?)))
        .collect::<Result<_>>()?;
    let best = logliks.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut winners = logliks.iter().filter(|(_, &v)| v == best).map(|(c, _)| c.clone());
    let predicted = winners.next().expect("at least one class");
    Ok(Classification {
        predicted,
        tied_with: winners.collect(),
        logliks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationConfig {
    pub model: ModelKind,
    pub fit: FitSettings,
    pub n_folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_test: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    pub random_floor: f64,
}

/// K-fold max-likelihood classification. Item `j` of each class belongs to
/// fold `j % n_folds`; the training items of a class are concatenated.
pub fn run_classification(
    datasets: &BTreeMap<String, Vec<TimeSeries>>,
    config: &ClassificationConfig,
) -> Result<ClassificationReport> {
    if datasets.is_empty() {
        return Err(Error::Invariant("no classes".into()));
    }
    if config.n_folds < 2 {
        return Err(Error::Invariant("need at least two folds".into()));
    }
    let folds = (0..config.n_folds)
        .into_par_iter()
        .map(|fold| {
            let models: BTreeMap<String, TrainedModel> = datasets
                .iter()
                .enumerate()
                .map(|(c, (class, items))| {
                    let train: Vec<TimeSeries> = items
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| j % config.n_folds != fold)
                        .map(|(_, s)| s.clone())
                        .collect();
                    if train.is_empty() {
                        return Err(Error::InsufficientData(format!(
                            "class '{class}' has no training data in fold {fold}"
                        )));
                    }
                    let seed = derive_seed(config.seed, fold as u64, c as u64);
                    let (m, _) = fit_model(config.model, &TimeSeries::concat(&train)?, &config.fit, seed)?;
                    Ok((class.clone(), m))
                })
                .collect::<Result<_>>()?;
            let mut n_test = 0;
            let mut n_correct = 0;
            for (class, items) in datasets {
                for s in items.iter().skip(fold).step_by(config.n_folds) {
                    n_test += 1;
                    if classify(&models, s)?.predicted == *class {
                        n_correct += 1;
                    }
                }
            }
            let accuracy = if n_test == 0 { 0.0 } else { n_correct as f64 / n_test as f64 };
            Ok(FoldResult { fold, n_test, n_correct, accuracy })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
    Ok(ClassificationReport {
        folds,
        mean_accuracy,
        random_floor: 1.0 / datasets.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(spec: &SyntheticSpec, models: Vec<ModelKind>) -> BenchConfig {
        let mut c = BenchConfig::new(spec);
        c.train_lengths = vec![120, 160];
        c.n_test = 3;
        c.test_length = 60;
        c.models = models;
        c.fit.max_iter = 5;
        c.seed = 9;
        c
    }

    #[test]
    fn model_kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("ar-aslg-hmm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1, 0), derive_seed(0, 2, 0));
        assert_ne!(derive_seed(0, 1, 0), derive_seed(0, 1, 1));
        assert_eq!(derive_seed(5, 1, 2), derive_seed(5, 1, 2));
    }

    #[test]
    fn gaussian_only_benchmark_has_one_row_per_length() {
        let spec = SyntheticSpec::default_benchmark();
        let config = tiny_config(&spec, vec![ModelKind::GaussianHmm]);
        let report = run_benchmark(&spec, &config).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].train_length, 120);
        assert_eq!(report.rows[1].train_length, 160);
        assert!(report.rows.iter().all(|r| r.test_logliks.len() == 3 && r.mean_loglik.is_finite()));
        assert_eq!(report.unavailable_baselines, vec!["ar-aslg-hmm".to_string()]);
    }

    #[test]
    fn benchmark_is_reproducible() {
        let spec = SyntheticSpec::default_benchmark();
        let config = tiny_config(&spec, vec![ModelKind::GaussianHmm, ModelKind::Kde(Variant::KdeHmm)]);
        let a = run_benchmark(&spec, &config).unwrap();
        let b = run_benchmark(&spec, &config).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.summary_json(), b.summary_json());
    }

    #[test]
    fn single_class_is_always_right() {
        let spec = SyntheticSpec::default_benchmark();
        let states = gen_state_sequence(&spec, 80).unwrap();
        let items: Vec<TimeSeries> = (0..4).map(|s| gen_observations(&spec, &states, s).unwrap()).collect();
        let datasets = BTreeMap::from([("only".to_string(), items)]);
        let mut fit = FitSettings::new(2, 1);
        fit.max_iter = 3;
        let config = ClassificationConfig { model: ModelKind::GaussianHmm, fit, n_folds: 2, seed: 0 };
        let report = run_classification(&datasets, &config).unwrap();
        assert_eq!(report.mean_accuracy, 1.0);
        assert_eq!(report.random_floor, 1.0);
    }

    #[test]
    fn classification_rejects_empty_training_split() {
        let spec = SyntheticSpec::default_benchmark();
        let states = gen_state_sequence(&spec, 80).unwrap();
        let one = vec![gen_observations(&spec, &states, 1).unwrap()];
        let two: Vec<TimeSeries> = (0..2).map(|s| gen_observations(&spec, &states, s).unwrap()).collect();
        let datasets = BTreeMap::from([("a".to_string(), one), ("b".to_string(), two)]);
        let config = ClassificationConfig {
            model: ModelKind::GaussianHmm,
            fit: FitSettings::new(2, 1),
            n_folds: 2,
            seed: 0,
        };
        assert!(matches!(run_classification(&datasets, &config), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn classify_breaks_ties_by_name() {
        let spec = SyntheticSpec::default_benchmark();
        let states = gen_state_sequence(&spec, 80).unwrap();
        let s = gen_observations(&spec, &states, 1).unwrap();
        let (m, _) = fit_model(ModelKind::GaussianHmm, &s, &FitSettings::new(2, 1), 0).unwrap();
        let models = BTreeMap::from([("zeta".to_string(), m.clone()), ("alpha".to_string(), m)]);
        let c = classify(&models, &s).unwrap();
        assert_eq!(c.predicted, "alpha");
        assert_eq!(c.tied_with, vec!["zeta".to_string()]);
    }
}
