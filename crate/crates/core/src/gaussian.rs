//! Plain Gaussian HMM baseline: independent per-state Gaussians for every
//! feature, trained by Baum–Welch over the same scored instants `t ≥ P*`.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{forward_backward_from, HiddenMarkovModel};
use crate::kernel::HALF_LN_2PI;
use crate::model::LogEmissions;
use crate::series::TimeSeries;
use crate::trainer::{m_step_transitions, FitReport, MONOTONE_SLACK};

const VAR_FLOOR_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHmm {
    pub n_states: usize,
    pub p_star: usize,
    pub pi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl HiddenMarkovModel for GaussianHmm {
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn p_star(&self) -> usize {
        self.p_star
    }
    fn initial(&self) -> &[f64] {
        &self.pi
    }
    fn transitions(&self) -> &[Vec<f64>] {
        &self.a
    }
    fn log_emissions(&self, series: &TimeSeries, _exclude_self: bool) -> Result<LogEmissions> {
        let m = self.means[0].len();
        if series.n_features() != m {
            return Err(Error::Invariant("series feature count differs from model".into()));
        }
        let mut values = Vec::with_capacity((series.len() - self.p_star) * self.n_states);
        for t in self.p_star..series.len() {
            let x = series.row(t);
            for i in 0..self.n_states {
                let mut s = 0.0;
                for (v, xv) in x.iter().enumerate() {
                    let var = self.variances[i][v];
                    let d = xv - self.means[i][v];
                    s -= HALF_LN_2PI + 0.5 * var.ln() + d * d / (2.0 * var);
                }
                values.push(s);
            }
        }
        Ok(LogEmissions::new(self.p_star, self.n_states, values))
    }
}

/// Baum–Welch from means at randomly chosen rows and the global variances.
pub fn fit_gaussian_hmm(
    series: &TimeSeries,
    n_states: usize,
    p_star: usize,
    max_iter: usize,
    rel_tol: f64,
    seed: u64,
) -> Result<(GaussianHmm, FitReport)> {
    let started = Instant::now();
    if n_states < 1 {
        return Err(Error::Invariant("need at least one hidden state".into()));
    }
    if series.len() < p_star + n_states.max(2) {
        return Err(Error::InsufficientData(format!(
            "series of length {} is too short for {n_states} states",
            series.len()
        )));
    }
    let m = series.n_features();
    let global_var: Vec<f64> = (0..m)
        .map(|v| series.column_std(v).powi(2).max(f64::MIN_POSITIVE))
        .collect();
    let floors: Vec<f64> = global_var.iter().map(|v| v * VAR_FLOOR_SCALE).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = sample(&mut rng, series.len() - p_star, n_states).into_vec();
    let mut model = GaussianHmm {
        n_states,
        p_star,
        pi: vec![1.0 / n_states as f64; n_states],
        a: (0..n_states)
            .map(|i| {
                let mut r: Vec<f64> = (0..n_states)
                    .map(|j| if i == j { 999.0 } else { 0.0 } + 1.0 / n_states as f64)
                    .collect();
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|x| *x /= s);
                r
            })
            .collect(),
        means: rows.iter().map(|&r| series.row(r + p_star).to_vec()).collect(),
        variances: vec![global_var.clone(); n_states],
    };

    let mut report = FitReport::default();
    let mut previous: Option<f64> = None;
    for iter in 0..max_iter {
        let em = model.log_emissions(series, false)?;
        let post = forward_backward_from(&model.pi, &model.a, &em)?;
        let ll = post.loglik_per_datum();
        report.loglik_trace.push(ll);
        report.iterations = iter + 1;
        if let Some(prev) = previous {
            if ll < prev - MONOTONE_SLACK * prev.abs() {
                report.warn(format!("Gaussian HMM log-likelihood decreased at iteration {iter}"));
            }
            if (ll - prev).abs() <= rel_tol * ll.abs() {
                report.converged = true;
                break;
            }
        }
        previous = Some(ll);
        for i in 0..n_states {
            let mass: f64 = (0..post.len()).map(|k| post.gamma_row(k)[i]).sum();
            if mass <= 1e-10 {
                report.warn(format!("Gaussian state {i} starved; keeping previous parameters"));
                continue;
            }
            for v in 0..m {
                let mean = (0..post.len())
                    .map(|k| post.gamma_row(k)[i] * series.get(k + p_star, v))
                    .sum::<f64>()
                    / mass;
                let var = (0..post.len())
                    .map(|k| {
                        let d = series.get(k + p_star, v) - mean;
                        post.gamma_row(k)[i] * d * d
                    })
                    .sum::<f64>()
                    / mass;
                model.means[i][v] = mean;
                model.variances[i][v] = var.max(floors[v]);
            }
        }
        let (pi, a, _) = m_step_transitions(&post);
        model.pi = pi;
        model.a = a;
    }
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((model, report))
}
