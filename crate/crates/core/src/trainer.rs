//! Expectation–maximization for a fixed dependency structure.
//!
//! The E-step never materializes the full `ψ` tensor. Each block of time
//! steps produces `ψ` for its instants and folds it into per-state
//! sufficient statistics: the column sums `Σ_t ψ^t_l(i)` (for `ω`) and the
//! `ψ`-weighted second moments of feature deviations `φ^t − φ^l` (for `M`,
//! `h` and the structure score). Every conditioning vector is a subset of
//! the features `x_v^{t−r}`, `r = 0..=P*`, so one moment matrix per state
//! serves every candidate structure.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ContextGraph;
use crate::inference::{forward_backward_from, Posteriors};
use crate::kernel::{silverman_bandwidth, Bandwidth};
use crate::model::{EmissionTables, KdeAsHmmModel, KernelWeights};
use crate::series::TimeSeries;

/// Added to every `ω` entry before renormalizing.
pub const OMEGA_EPSILON: f64 = 1e-12;
/// Relative slack allowed on the per-iteration log-likelihood.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// A state whose total posterior mass falls below this is considered starved.
pub const STARVATION_MASS: f64 = 1e-10;
pub const DEFAULT_BLOCK: usize = 256;
const RIDGE_SCALE: f64 = 1e-8;
const SINGULAR_RATIO: f64 = 1e-13;
const INIT_DIAGONAL: f64 = 999.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub n_states: usize,
    pub p_star: usize,
    /// Fixed structure; naive when absent.
    #[serde(default)]
    pub graph: Option<ContextGraph>,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
    /// Time steps per E-step block.
    pub block_size: usize,
}

impl EmConfig {
    pub fn new(n_states: usize, p_star: usize) -> Self {
        EmConfig {
            n_states,
            p_star,
            graph: None,
            max_iter: 100,
            rel_tol: 1e-6,
            seed: 0,
            block_size: DEFAULT_BLOCK,
        }
    }
}

/// One accepted structure change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedMove {
    pub state: usize,
    pub var: usize,
    pub kind: crate::structure::MoveKind,
    pub score_before: f64,
    pub score_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Training log-likelihood per datum, one entry per E-step.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    pub moves: Vec<AcceptedMove>,
}

impl FitReport {
    pub(crate) fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        if !self.warnings.contains(&msg) {
            self.warnings.push(msg);
        }
    }

    pub(crate) fn absorb(&mut self, other: FitReport) {
        self.loglik_trace.extend(other.loglik_trace);
        self.iterations += other.iterations;
        self.converged = other.converged;
        self.wall_time_s += other.wall_time_s;
        for w in other.warnings {
            if !self.warnings.contains(&w) {
                self.warnings.push(w);
            }
        }
        self.moves.extend(other.moves);
    }
}

fn diag_heavy_transitions(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|j| if i == j { INIT_DIAGONAL } else { 0.0 } + 1.0 / n as f64)
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect()
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Naive graphs, Silverman bandwidths, `ω ~ U[0.4, 0.6]` normalized,
/// uniform `π`, diagonal-heavy `A`.
pub fn init_model(series: &TimeSeries, n_states: usize, p_star: usize, seed: u64) -> Result<KdeAsHmmModel> {
    if n_states < 1 {
        return Err(Error::Invariant("need at least one hidden state".into()));
    }
    if series.len() < p_star + 2 {
        return Err(Error::InsufficientData(format!(
            "training series of length {} needs at least P* + 2 = {} rows",
            series.len(),
            p_star + 2
        )));
    }
    let m = series.n_features();
    let h_row: Vec<Bandwidth> = (0..m)
        .map(|v| silverman_bandwidth(series.column_std(v), series.len()))
        .collect::<Result<_>>()?;
    let n_c = series.len() - p_star;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = (0..n_states)
        .map(|_| {
            let mut row: Vec<f64> = (0..n_c).map(|_| rng.random_range(0.4..=0.6)).collect();
            normalize(&mut row);
            row
        })
        .collect();
    let graph = ContextGraph::naive(n_states, m);
    Ok(KdeAsHmmModel {
        n_states,
        p_star,
        pi: vec![1.0 / n_states as f64; n_states],
        a: diag_heavy_transitions(n_states),
        weights: KernelWeights::zeros(&graph),
        graph,
        h: vec![h_row; n_states],
        omega,
        centers: series.clone(),
    })
}

/// Supervised `ω`: `1` where the instant's label maps to the state, `1e−5`
/// elsewhere, then each row normalized. `labels` covers every training row.
pub fn init_omega_from_labels(
    model: &mut KdeAsHmmModel,
    labels: &[String],
    mapping: &BTreeMap<String, usize>,
) -> Result<()> {
    let p = model.p_star;
    if labels.len() != model.centers.len() {
        return Err(Error::Invariant(format!(
            "{} labels for {} training rows",
            labels.len(),
            model.centers.len()
        )));
    }
    let states: Vec<usize> = labels[p..]
        .iter()
        .map(|lab| {
            mapping
                .get(lab)
                .copied()
                .filter(|&s| s < model.n_states)
                .ok_or_else(|| Error::Invariant(format!("label '{lab}' is not mapped to a state")))
        })
        .collect::<Result<_>>()?;
    for (i, row) in model.omega.iter_mut().enumerate() {
        for (w, &s) in row.iter_mut().zip(&states) {
            *w = if s == i { 1.0 } else { 1e-5 };
        }
        normalize(row);
    }
    Ok(())
}

/// `ψ^t_l(i)` for a contiguous run of instants.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiBlock {
    pub t_start: usize,
    pub n_t: usize,
    /// `[(k * N + i) * L' + l']` with `t = t_start + k`, `l = l' + P*`.
    pub values: Vec<f64>,
}

/// Joint posterior of state and active kernel center, stored in time blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPosterior {
    pub p_star: usize,
    pub n_states: usize,
    pub n_centers: usize,
    pub block_size: usize,
    pub blocks: Vec<PsiBlock>,
}

impl KernelPosterior {
    /// `ψ^t_l(i)` for absolute times `t` and center index `l`.
    pub fn psi(&self, t: usize, l: usize, i: usize) -> f64 {
        let k = t - self.p_star;
        let block = &self.blocks[k / self.block_size];
        let kk = t - block.t_start;
        block.values[(kk * self.n_states + i) * self.n_centers + (l - self.p_star)]
    }
}

/// Per-state sufficient statistics gathered from one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub p_star: usize,
    pub n_vars: usize,
    /// Index of the last training instant, `T`.
    pub last_t: usize,
    pub n_centers: usize,
    /// `Σ_t γ^t(i)`.
    pub gamma_sum: Vec<f64>,
    /// `Σ_t ψ^t_l(i)`, `[i * L' + l']`.
    pub psi_colsum: Vec<f64>,
    /// `Σ_t Σ_l ψ^t_l(i) (φ^t − φ^l)(φ^t − φ^l)ᵀ`, `[(i * F + f) * F + g]`.
    pub moments: Vec<f64>,
    pub feature_std: Vec<f64>,
}

impl SufficientStats {
    pub fn n_features(&self) -> usize {
        self.n_vars * (self.p_star + 1)
    }

    /// Feature index of `x_var^{t−lag}`.
    pub fn feature(&self, var: usize, lag: usize) -> usize {
        var * (self.p_star + 1) + lag
    }

    pub fn moment(&self, state: usize, f: usize, g: usize) -> f64 {
        let nf = self.n_features();
        self.moments[(state * nf + f) * nf + g]
    }

    /// Conditioning features of `(state, var)` under `graph`: parents, then lags.
    pub fn conditioning_features(&self, graph: &ContextGraph, state: usize, var: usize) -> Vec<usize> {
        let mut f: Vec<usize> = graph.parents[state][var].iter().map(|&v| self.feature(v, 0)).collect();
        f.extend((1..=graph.ar_order[state][var]).map(|r| self.feature(var, r)));
        f
    }

    /// `Σψ (x̄ − w·ū)²` for an arbitrary weight row.
    pub fn weighted_rss(&self, state: usize, var: usize, cond: &[usize], w: &[f64]) -> f64 {
        let g = self.feature(var, 0);
        let mut rss = self.moment(state, g, g);
        for (a, &fa) in cond.iter().enumerate() {
            rss -= 2.0 * w[a] * self.moment(state, fa, g);
            for (b, &fb) in cond.iter().enumerate() {
                rss += w[a] * w[b] * self.moment(state, fa, fb);
            }
        }
        rss.max(0.0)
    }

    pub fn from_kernel_posterior(
        kp: &KernelPosterior,
        post: &Posteriors,
        series: &TimeSeries,
    ) -> Self {
        let features = FeatureTable::new(series, kp.p_star);
        let mut acc = StatsAccumulator::new(kp.n_states, kp.n_centers, features.n_features);
        for block in &kp.blocks {
            for k in 0..block.n_t {
                let t = block.t_start + k;
                for i in 0..kp.n_states {
                    let row = &block.values
                        [(k * kp.n_states + i) * kp.n_centers..(k * kp.n_states + i + 1) * kp.n_centers];
                    let g = post.gamma_row(t - kp.p_star)[i];
                    acc.add(i, g, row, &features, t);
                }
            }
        }
        acc.finish(&features, series, kp.p_star)
    }
}

/// Mean-centered features `x_v^{t−r}` for every row `t ≥ P*`.
struct FeatureTable {
    n_features: usize,
    p_star: usize,
    /// `[(t − P*) * F + f]`.
    values: Vec<f64>,
}

impl FeatureTable {
    fn new(series: &TimeSeries, p_star: usize) -> Self {
        let m = series.n_features();
        let nf = m * (p_star + 1);
        let means: Vec<f64> = (0..m).map(|v| series.column_mean(v)).collect();
        let n = series.len() - p_star;
        let mut values = Vec::with_capacity(n * nf);
        for k in 0..n {
            let t = k + p_star;
            for (v, mean) in means.iter().enumerate() {
                for r in 0..=p_star {
                    values.push(series.get(t - r, v) - mean);
                }
            }
        }
        FeatureTable {
            n_features: nf,
            p_star,
            values,
        }
    }

    fn at(&self, t: usize) -> &[f64] {
        let k = t - self.p_star;
        &self.values[k * self.n_features..(k + 1) * self.n_features]
    }

    /// Rows of all centers, which coincide with training instants.
    fn centers(&self) -> &[f64] {
        &self.values
    }
}

struct StatsAccumulator {
    n_states: usize,
    n_centers: usize,
    nf: usize,
    gamma_sum: Vec<f64>,
    colsum: Vec<f64>,
    /// `Σ_t γ φ^tφ^tᵀ − φ^t sᵀ − s φ^tᵀ`, completed in `finish`.
    partial: Vec<f64>,
    s: Vec<f64>,
}

impl StatsAccumulator {
    fn new(n_states: usize, n_centers: usize, nf: usize) -> Self {
        StatsAccumulator {
            n_states,
            n_centers,
            nf,
            gamma_sum: vec![0.0; n_states],
            colsum: vec![0.0; n_states * n_centers],
            partial: vec![0.0; n_states * nf * nf],
            s: vec![0.0; nf],
        }
    }

    fn add(&mut self, i: usize, gamma: f64, psi: &[f64], features: &FeatureTable, t: usize) {
        let nf = self.nf;
        self.gamma_sum[i] += gamma;
        let cs = &mut self.colsum[i * self.n_centers..(i + 1) * self.n_centers];
        self.s.iter_mut().for_each(|x| *x = 0.0);
        let centers = features.centers();
        for (l, &w) in psi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            cs[l] += w;
            let phi = &centers[l * nf..(l + 1) * nf];
            for (s, p) in self.s.iter_mut().zip(phi) {
                *s += w * p;
            }
        }
        let phi_t = features.at(t);
        let block = &mut self.partial[i * nf * nf..(i + 1) * nf * nf];
        for f in 0..nf {
            for g in 0..nf {
                block[f * nf + g] +=
                    gamma * phi_t[f] * phi_t[g] - phi_t[f] * self.s[g] - self.s[f] * phi_t[g];
            }
        }
    }

    fn merge(&mut self, other: &StatsAccumulator) {
        for (a, b) in self.gamma_sum.iter_mut().zip(&other.gamma_sum) {
            *a += b;
        }
        for (a, b) in self.colsum.iter_mut().zip(&other.colsum) {
            *a += b;
        }
        for (a, b) in self.partial.iter_mut().zip(&other.partial) {
            *a += b;
        }
    }

    fn finish(mut self, features: &FeatureTable, series: &TimeSeries, p_star: usize) -> SufficientStats {
        let nf = self.nf;
        let centers = features.centers();
        for i in 0..self.n_states {
            let block = &mut self.partial[i * nf * nf..(i + 1) * nf * nf];
            for l in 0..self.n_centers {
                let c = self.colsum[i * self.n_centers + l];
                if c == 0.0 {
                    continue;
                }
                let phi = &centers[l * nf..(l + 1) * nf];
                for f in 0..nf {
                    for g in 0..nf {
                        block[f * nf + g] += c * phi[f] * phi[g];
                    }
                }
            }
            // symmetrize rounding noise
            for f in 0..nf {
                for g in f + 1..nf {
                    let avg = 0.5 * (block[f * nf + g] + block[g * nf + f]);
                    block[f * nf + g] = avg;
                    block[g * nf + f] = avg;
                }
            }
        }
        SufficientStats {
            p_star,
            n_vars: series.n_features(),
            last_t: series.len() - 1,
            n_centers: self.n_centers,
            gamma_sum: self.gamma_sum,
            psi_colsum: self.colsum,
            moments: self.partial,
            feature_std: (0..series.n_features()).map(|v| series.column_std(v)).collect(),
        }
    }
}

fn check_training_series(model: &KdeAsHmmModel, series: &TimeSeries) -> Result<()> {
    if series != &model.centers {
        return Err(Error::Invariant(
            "training-mode E-step requires the model's own training series".into(),
        ));
    }
    Ok(())
}

/// Fill `out` with `ψ^t_·(i)` from the log mixture terms.
fn psi_row(tables: &EmissionTables<'_>, t: usize, i: usize, gamma: f64, out: &mut [f64]) {
    let lse = tables.log_emission(t, i, out);
    if lse == f64::NEG_INFINITY || gamma == 0.0 {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in out.iter_mut() {
        *v = gamma * (*v - lse).exp();
    }
}

/// Training-mode E-step with `ψ` materialized in blocks.
pub fn e_step(model: &KdeAsHmmModel, series: &TimeSeries) -> Result<(Posteriors, KernelPosterior)> {
    e_step_blocked(model, series, DEFAULT_BLOCK)
}

pub fn e_step_blocked(
    model: &KdeAsHmmModel,
    series: &TimeSeries,
    block_size: usize,
) -> Result<(Posteriors, KernelPosterior)> {
    check_training_series(model, series)?;
    let block_size = block_size.max(1);
    let tables = EmissionTables::new(model, series, true)?;
    let post = forward_backward_from(&model.pi, &model.a, &tables.matrix())?;
    let n = model.n_states;
    let n_c = model.n_centers();
    let p = model.p_star;
    let n_t = tables.n_t;
    let blocks = (0..n_t.div_ceil(block_size))
        .into_par_iter()
        .map(|b| {
            let start = b * block_size;
            let end = (start + block_size).min(n_t);
            let mut values = vec![0.0; (end - start) * n * n_c];
            for k in start..end {
                for i in 0..n {
                    let off = ((k - start) * n + i) * n_c;
                    psi_row(&tables, k + p, i, post.gamma_row(k)[i], &mut values[off..off + n_c]);
                }
            }
            PsiBlock {
                t_start: start + p,
                n_t: end - start,
                values,
            }
        })
        .collect();
    let kp = KernelPosterior {
        p_star: p,
        n_states: n,
        n_centers: n_c,
        block_size,
        blocks,
    };
    Ok((post, kp))
}

/// Training-mode E-step folded straight into sufficient statistics.
pub fn e_step_stats(
    model: &KdeAsHmmModel,
    series: &TimeSeries,
    block_size: usize,
) -> Result<(Posteriors, SufficientStats)> {
    check_training_series(model, series)?;
    let block_size = block_size.max(1);
    let tables = EmissionTables::new(model, series, true)?;
    let post = forward_backward_from(&model.pi, &model.a, &tables.matrix())?;
    let n = model.n_states;
    let n_c = model.n_centers();
    let p = model.p_star;
    let features = FeatureTable::new(series, p);
    let nf = features.n_features;
    let n_t = tables.n_t;
    let partials: Vec<StatsAccumulator> = (0..n_t.div_ceil(block_size))
        .into_par_iter()
        .map(|b| {
            let start = b * block_size;
            let end = (start + block_size).min(n_t);
            let mut acc = StatsAccumulator::new(n, n_c, nf);
            let mut row = vec![0.0; n_c];
            for k in start..end {
                for i in 0..n {
                    let g = post.gamma_row(k)[i];
                    psi_row(&tables, k + p, i, g, &mut row);
                    acc.add(i, g, &row, &features, k + p);
                }
            }
            acc
        })
        .collect();
    // fixed-order merge keeps results independent of the thread count
    let mut iter = partials.into_iter();
    let mut total = iter.next().expect("at least one block");
    for part in iter {
        total.merge(&part);
    }
    Ok((post, total.finish(&features, series, p)))
}

/// Outcome of a single weight-row solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate {
    pub weights: Vec<f64>,
    pub ridge_used: bool,
}

/// Solve the normal equations for a conditioning set given as feature indices.
pub(crate) fn solve_weights(stats: &SufficientStats, state: usize, var: usize, cond: &[usize]) -> WeightUpdate {
    let d = cond.len();
    if d == 0 {
        return WeightUpdate {
            weights: Vec::new(),
            ridge_used: false,
        };
    }
    let g = stats.feature(var, 0);
    let lhs = DMatrix::from_fn(d, d, |a, b| stats.moment(state, cond[a], cond[b]));
    let rhs = DVector::from_fn(d, |a, _| stats.moment(state, cond[a], g));
    let max_diag = (0..d).map(|a| lhs[(a, a)]).fold(0.0, f64::max);
    if let Some(chol) = lhs.clone().cholesky() {
        let l = chol.l();
        let min_pivot = (0..d).map(|a| l[(a, a)] * l[(a, a)]).fold(f64::INFINITY, f64::min);
        if max_diag > 0.0 && min_pivot > SINGULAR_RATIO * max_diag {
            return WeightUpdate {
                weights: chol.solve(&rhs).iter().copied().collect(),
                ridge_used: false,
            };
        }
    }
    let trace: f64 = (0..d).map(|a| lhs[(a, a)]).sum();
    let ridge = if trace > 0.0 { RIDGE_SCALE * trace / d as f64 } else { RIDGE_SCALE };
    let mut reg = lhs;
    for a in 0..d {
        reg[(a, a)] += ridge;
    }
    let weights = match reg.clone().cholesky() {
        Some(chol) => chol.solve(&rhs).iter().copied().collect(),
        None => reg
            .lu()
            .solve(&rhs)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; d]),
    };
    WeightUpdate {
        weights,
        ridge_used: true,
    }
}

/// Kernel-weight row for `(state, var)` under `graph`; empty when unconditioned.
pub fn m_step_weights(stats: &SufficientStats, graph: &ContextGraph, state: usize, var: usize) -> Result<WeightUpdate> {
    if state >= graph.n_states() || var >= graph.n_vars() || graph.n_vars() != stats.n_vars {
        return Err(Error::Invariant("weight update does not match the statistics".into()));
    }
    let cond = stats.conditioning_features(graph, state, var);
    Ok(solve_weights(stats, state, var, &cond))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthUpdate {
    pub h: Bandwidth,
    /// `√(3 Σψ(x − μ̂)² / Σγ)`; the update is a local maximum iff `h` is below it.
    pub local_max_bound: f64,
    pub floored: bool,
}

impl BandwidthUpdate {
    pub fn is_local_max(&self) -> bool {
        self.h.value() < self.local_max_bound
    }
}

pub(crate) fn bandwidth_from_rss(stats: &SufficientStats, state: usize, var: usize, rss: f64) -> Result<BandwidthUpdate> {
    let mass = stats.gamma_sum[state];
    if !(mass > STARVATION_MASS) {
        return Err(Error::StateStarvation(state));
    }
    let raw = (rss / mass).sqrt();
    let h = Bandwidth::floored(raw, stats.feature_std[var]);
    Ok(BandwidthUpdate {
        h,
        local_max_bound: (3.0 * rss / mass).sqrt(),
        floored: h.value() != raw,
    })
}

/// Bandwidth for `(state, var)` given the (already updated) weight row.
pub fn m_step_bandwidth(
    stats: &SufficientStats,
    graph: &ContextGraph,
    weights: &[f64],
    state: usize,
    var: usize,
) -> Result<BandwidthUpdate> {
    let cond = stats.conditioning_features(graph, state, var);
    if cond.len() != weights.len() {
        return Err(Error::Invariant("weight row does not match the conditioning set".into()));
    }
    let rss = stats.weighted_rss(state, var, &cond, weights);
    bandwidth_from_rss(stats, state, var, rss)
}

/// `ω_il = Σ_t ψ^t_l(i) / Σ_t γ^t(i)`, then `ε`-smoothed and renormalized.
pub fn m_step_omega(stats: &SufficientStats, state: usize) -> Result<Vec<f64>> {
    let mass = stats.gamma_sum[state];
    if !(mass > STARVATION_MASS) {
        return Err(Error::StateStarvation(state));
    }
    let n_c = stats.n_centers;
    let mut row: Vec<f64> = stats.psi_colsum[state * n_c..(state + 1) * n_c]
        .iter()
        .map(|c| c / mass + OMEGA_EPSILON)
        .collect();
    normalize(&mut row);
    Ok(row)
}

/// Standard HMM updates. Starved rows are reset to uniform; their indices are returned.
pub fn m_step_transitions(post: &Posteriors) -> (Vec<f64>, Vec<Vec<f64>>, Vec<usize>) {
    let n = post.n_states;
    let mut pi = post.gamma_row(0).to_vec();
    normalize(&mut pi);
    let mut a = vec![vec![0.0; n]; n];
    for k in 0..post.len().saturating_sub(1) {
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += post.zeta_at(k, i, j);
            }
        }
    }
    let mut starved = Vec::new();
    for (i, row) in a.iter_mut().enumerate() {
        let s: f64 = row.iter().sum();
        if s > 0.0 && s.is_finite() {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / n as f64);
            starved.push(i);
        }
    }
    (pi, a, starved)
}

/// Reset a starved state to uniform `ω` and Silverman bandwidths.
fn reset_state(model: &mut KdeAsHmmModel, state: usize) -> Result<()> {
    let n_c = model.n_centers();
    model.omega[state] = vec![1.0 / n_c as f64; n_c];
    for v in 0..model.n_vars() {
        model.h[state][v] = silverman_bandwidth(model.centers.column_std(v), model.centers.len())?;
    }
    Ok(())
}

/// One full M-step. Returns whether any state had to be reset.
pub(crate) fn m_step(
    model: &mut KdeAsHmmModel,
    post: &Posteriors,
    stats: &SufficientStats,
    report: &mut FitReport,
) -> Result<bool> {
    let mut reset = false;
    for i in 0..model.n_states {
        if !(stats.gamma_sum[i] > STARVATION_MASS) {
            report.warn(format!("state {i} starved of posterior mass; reset omega and bandwidths"));
            reset_state(model, i)?;
            reset = true;
            continue;
        }
        for m in 0..model.n_vars() {
            let upd = m_step_weights(stats, &model.graph, i, m)?;
            if upd.ridge_used {
                report.warn(format!("singular kernel-weight system for state {i}, var {m}; ridge added"));
            }
            let bw = m_step_bandwidth(stats, &model.graph, &upd.weights, i, m)?;
            if bw.floored {
                report.warn(format!("bandwidth of state {i}, var {m} clamped to the floor"));
            }
            if !bw.is_local_max() {
                report.warn(format!(
                    "bandwidth of state {i}, var {m} violates the local-maximum bound"
                ));
            }
            model.weights.0[i][m] = upd.weights;
            model.h[i][m] = bw.h;
        }
        model.omega[i] = m_step_omega(stats, i)?;
    }
    let (pi, a, starved) = m_step_transitions(post);
    for i in starved {
        report.warn(format!("state {i} has no outgoing transition mass; row reset to uniform"));
    }
    model.pi = pi;
    model.a = a;
    Ok(reset)
}

/// Initialize from `config` and run EM.
pub fn em_fit(series: &TimeSeries, config: &EmConfig) -> Result<(KdeAsHmmModel, FitReport)> {
    let mut model = init_model(series, config.n_states, config.p_star, config.seed)?;
    if let Some(graph) = &config.graph {
        set_structure(&mut model, graph.clone())?;
    }
    em_fit_from(model, series, config)
}

/// Replace the structure and zero the kernel weights.
pub fn set_structure(model: &mut KdeAsHmmModel, graph: ContextGraph) -> Result<()> {
    if graph.n_states() != model.n_states || graph.n_vars() != model.n_vars() {
        return Err(Error::Invariant(format!(
            "graph has {} states x {} vars, model has {} x {}",
            graph.n_states(),
            graph.n_vars(),
            model.n_states,
            model.n_vars()
        )));
    }
    graph.validate(model.p_star)?;
    model.weights = KernelWeights::zeros(&graph);
    model.graph = graph;
    Ok(())
}

/// Run EM starting from `model`, whose centers must be `series`.
pub fn em_fit_from(
    mut model: KdeAsHmmModel,
    series: &TimeSeries,
    config: &EmConfig,
) -> Result<(KdeAsHmmModel, FitReport)> {
    let started = Instant::now();
    model.graph.validate(model.p_star)?;
    let mut report = FitReport::default();
    let mut previous: Option<f64> = None;
    let mut skip_check = false;
    for iter in 0..config.max_iter {
        let (post, stats) = e_step_stats(&model, series, config.block_size)?;
        let ll = post.loglik_per_datum();
        report.loglik_trace.push(ll);
        report.iterations = iter + 1;
        if let Some(prev) = previous {
            if !skip_check && ll < prev - MONOTONE_SLACK * prev.abs() {
                return Err(Error::NonMonotone {
                    iteration: iter,
                    previous: prev,
                    current: ll,
                });
            }
            if (ll - prev).abs() <= config.rel_tol * ll.abs() {
                report.converged = true;
                break;
            }
        }
        previous = Some(ll);
        skip_check = m_step(&mut model, &post, &stats, &mut report)?;
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((model, report))
}
