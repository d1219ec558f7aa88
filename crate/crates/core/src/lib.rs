//! Kernel-density asymmetric hidden Markov models: nonparametric emissions
//! with per-state dependency graphs and autoregressive kernel corrections.

pub mod bench;
pub mod error;
pub mod gaussian;
pub mod graph;
pub mod inference;
pub mod kernel;
pub mod model;
pub mod series;
pub mod structure;
pub mod synth;
pub mod trainer;

pub use bench::{classify, fit_model, run_benchmark, run_classification, ModelKind, TrainedModel};
pub use error::{Error, ErrorKind, Result};
pub use gaussian::{fit_gaussian_hmm, GaussianHmm};
pub use graph::ContextGraph;
pub use inference::{forward_backward, log_likelihood, viterbi, HiddenMarkovModel, Posteriors};
pub use kernel::Bandwidth;
pub use model::{KdeAsHmmModel, KernelWeights, LogEmissions};
pub use series::TimeSeries;
pub use structure::{sem_fit, SemConfig, Variant};
pub use synth::SyntheticSpec;
pub use trainer::{em_fit, EmConfig, FitReport};
