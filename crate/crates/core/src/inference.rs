//! Log-domain forward–backward, sequence likelihood and Viterbi decoding.
//!
//! All quantities are indexed from the first scored instant `t = P*`.

use crate::error::{Error, Result};
use crate::kernel::log_sum_exp_unchecked;
use crate::model::{KdeAsHmmModel, LogEmissions};
use crate::series::TimeSeries;

/// Anything with an initial law, a transition matrix and per-instant log emissions.
pub trait HiddenMarkovModel {
    fn n_states(&self) -> usize;
    fn p_star(&self) -> usize;
    fn initial(&self) -> &[f64];
    fn transitions(&self) -> &[Vec<f64>];
    fn log_emissions(&self, series: &TimeSeries, exclude_self: bool) -> Result<LogEmissions>;
}

impl HiddenMarkovModel for KdeAsHmmModel {
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
    fn log_emissions(&self, series: &TimeSeries, exclude_self: bool) -> Result<LogEmissions> {
        self.emission_log_matrix(series, exclude_self)
    }
}

/// State posteriors for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub first_t: usize,
    pub n_states: usize,
    /// `γ[k * N + i]` for `t = first_t + k`.
    pub gamma: Vec<f64>,
    /// `ζ[(k * N + i) * N + j]`, transitions `t → t+1`.
    pub zeta: Vec<f64>,
    pub loglik: f64,
}

impl Posteriors {
    pub fn len(&self) -> usize {
        self.gamma.len() / self.n_states
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma_row(&self, k: usize) -> &[f64] {
        &self.gamma[k * self.n_states..(k + 1) * self.n_states]
    }

    pub fn zeta_at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.zeta[(k * self.n_states + i) * self.n_states + j]
    }

    /// Log-likelihood divided by the number of scored instants.
    pub fn loglik_per_datum(&self) -> f64 {
        self.loglik / self.len() as f64
    }
}

fn log_params(pi: &[f64], a: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = pi.len();
    if n == 0 || a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Invariant("transition matrix shape mismatch".into()));
    }
    if pi.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Invariant("initial distribution is all zero".into()));
    }
    for (i, row) in a.iter().enumerate() {
        if row.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Invariant(format!("row {i} of A is all zero")));
        }
    }
    let log_pi = pi.iter().map(|p| p.ln()).collect();
    let log_a = a.iter().flatten().map(|p| p.ln()).collect();
    Ok((log_pi, log_a))
}

fn forward(log_pi: &[f64], log_a: &[f64], em: &LogEmissions) -> Vec<f64> {
    let n = em.n_states;
    let len = em.len();
    let mut alpha = vec![0.0; len * n];
    for i in 0..n {
        alpha[i] = log_pi[i] + em.row(0)[i];
    }
    let mut scratch = vec![0.0; n];
    for k in 1..len {
        let (done, rest) = alpha.split_at_mut(k * n);
        let prev = &done[(k - 1) * n..];
        let b = em.row(k);
        for j in 0..n {
            for i in 0..n {
                scratch[i] = prev[i] + log_a[i * n + j];
            }
            rest[j] = log_sum_exp_unchecked(&scratch) + b[j];
        }
    }
    alpha
}

fn check_nonempty(em: &LogEmissions, n: usize) -> Result<()> {
    if em.n_states != n {
        return Err(Error::Invariant("emission matrix has the wrong state count".into()));
    }
    if em.is_empty() {
        return Err(Error::InsufficientData("no scored instants".into()));
    }
    Ok(())
}

/// Forward pass only.
pub fn log_likelihood_from(pi: &[f64], a: &[Vec<f64>], em: &LogEmissions) -> Result<f64> {
    let (log_pi, log_a) = log_params(pi, a)?;
    check_nonempty(em, pi.len())?;
    let alpha = forward(&log_pi, &log_a, em);
    let n = em.n_states;
    Ok(log_sum_exp_unchecked(&alpha[(em.len() - 1) * n..]))
}

pub fn forward_backward_from(pi: &[f64], a: &[Vec<f64>], em: &LogEmissions) -> Result<Posteriors> {
    let (log_pi, log_a) = log_params(pi, a)?;
    let n = pi.len();
    check_nonempty(em, n)?;
    let len = em.len();
    let alpha = forward(&log_pi, &log_a, em);
    let loglik = log_sum_exp_unchecked(&alpha[(len - 1) * n..]);
    if !loglik.is_finite() {
        return Err(Error::Numerical(format!("sequence log-likelihood is {loglik}")));
    }

    let mut beta = vec![0.0; len * n];
    let mut scratch = vec![0.0; n];
    for k in (0..len - 1).rev() {
        let (head, tail) = beta.split_at_mut((k + 1) * n);
        let next = &tail[..n];
        let b = em.row(k + 1);
        for i in 0..n {
            for j in 0..n {
                scratch[j] = log_a[i * n + j] + b[j] + next[j];
            }
            head[k * n + i] = log_sum_exp_unchecked(&scratch);
        }
    }

    let gamma: Vec<f64> = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (a + b - loglik).exp())
        .collect();
    let mut zeta = vec![0.0; len.saturating_sub(1) * n * n];
    for k in 0..len.saturating_sub(1) {
        let b = em.row(k + 1);
        for i in 0..n {
            for j in 0..n {
                zeta[(k * n + i) * n + j] = (alpha[k * n + i] + log_a[i * n + j] + b[j]
                    + beta[(k + 1) * n + j]
                    - loglik)
                    .exp();
            }
        }
    }
    Ok(Posteriors {
        first_t: em.first_t,
        n_states: n,
        gamma,
        zeta,
        loglik,
    })
}

/// Most probable state path; ties resolved toward the lowest state index.
pub fn viterbi_from(pi: &[f64], a: &[Vec<f64>], em: &LogEmissions) -> Result<Vec<usize>> {
    let (log_pi, log_a) = log_params(pi, a)?;
    let n = pi.len();
    check_nonempty(em, n)?;
    let len = em.len();
    let mut delta: Vec<f64> = (0..n).map(|i| log_pi[i] + em.row(0)[i]).collect();
    let mut back = vec![0usize; len * n];
    let mut next = vec![0.0; n];
    for k in 1..len {
        let b = em.row(k);
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, d) in delta.iter().enumerate() {
                let s = d + log_a[i * n + j];
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + b[j];
            back[k * n + j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut state = 0;
    for (i, d) in delta.iter().enumerate() {
        if *d > delta[state] {
            state = i;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = state;
    for k in (1..len).rev() {
        state = back[k * n + state];
        path[k - 1] = state;
    }
    Ok(path)
}

fn scored_emissions<M: HiddenMarkovModel + ?Sized>(
    model: &M,
    series: &TimeSeries,
    exclude_self: bool,
) -> Result<LogEmissions> {
    if series.len() < model.p_star() + 1 {
        return Err(Error::InsufficientData(format!(
            "series of length {} needs at least P* + 1 = {} rows",
            series.len(),
            model.p_star() + 1
        )));
    }
    model.log_emissions(series, exclude_self)
}

pub fn forward_backward<M: HiddenMarkovModel + ?Sized>(
    model: &M,
    series: &TimeSeries,
    exclude_self: bool,
) -> Result<Posteriors> {
    let em = scored_emissions(model, series, exclude_self)?;
    forward_backward_from(model.initial(), model.transitions(), &em)
}

/// `ln P(x^{P*:T} | λ)` with every training center available.
pub fn log_likelihood<M: HiddenMarkovModel + ?Sized>(model: &M, series: &TimeSeries) -> Result<f64> {
    let em = scored_emissions(model, series, false)?;
    log_likelihood_from(model.initial(), model.transitions(), &em)
}

/// Viterbi path for instants `P*..=T`.
pub fn viterbi<M: HiddenMarkovModel + ?Sized>(model: &M, series: &TimeSeries) -> Result<Vec<usize>> {
    let em = scored_emissions(model, series, false)?;
    viterbi_from(model.initial(), model.transitions(), &em)
}
