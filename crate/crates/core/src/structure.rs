//! Structural EM: penalized per-(state, variable) scores and greedy-forward
//! growth of parent sets and autoregressive orders.
//!
//! Candidate structures are refit under the current `ψ` only, so every
//! candidate costs one small linear solve against the moment matrices in
//! [`SufficientStats`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ContextGraph;
use crate::kernel::{Bandwidth, HALF_LN_2PI};
use crate::model::KdeAsHmmModel;
use crate::series::TimeSeries;
use crate::trainer::{
    bandwidth_from_rss, e_step_stats, em_fit, em_fit_from, solve_weights, AcceptedMove, EmConfig,
    FitReport, SufficientStats, STARVATION_MASS,
};

/// Minimum score gain for a move to be accepted.
pub const ACCEPT_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MoveKind {
    AddParent { parent: usize },
    IncrementAr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchMove {
    pub state: usize,
    pub var: usize,
    pub kind: MoveKind,
}

/// Which move kinds the search may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchFlags {
    pub parents: bool,
    pub ar: bool,
}

impl SearchFlags {
    pub fn any(self) -> bool {
        self.parents || self.ar
    }
}

/// Model family by allowed structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// No structure search.
    KdeHmm,
    /// Autoregressive orders only.
    KdeAr,
    /// Within-time parents only.
    KdeBn,
    /// Both.
    KdeAs,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::KdeHmm, Variant::KdeAr, Variant::KdeBn, Variant::KdeAs];

    pub fn flags(self) -> SearchFlags {
        match self {
            Variant::KdeHmm => SearchFlags { parents: false, ar: false },
            Variant::KdeAr => SearchFlags { parents: false, ar: true },
            Variant::KdeBn => SearchFlags { parents: true, ar: false },
            Variant::KdeAs => SearchFlags { parents: true, ar: true },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::KdeHmm => "kde-hmm",
            Variant::KdeAr => "kde-ar",
            Variant::KdeBn => "kde-bn",
            Variant::KdeAs => "kde-as",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub fit: f64,
    pub penalty: f64,
    pub total: f64,
    pub state: usize,
    pub var: usize,
    pub kappa: usize,
    pub p: usize,
}

/// `½ (κ + p + T + 1 − P*) ln T`, `T` being the last training index.
pub fn structure_penalty(kappa: usize, p: usize, last_t: usize, p_star: usize) -> f64 {
    0.5 * (kappa + p + last_t + 1 - p_star) as f64 * (last_t as f64).ln()
}

/// Score `(state, var)` under given weights and bandwidth.
///
/// The fit term is `Σ_t Σ_{l≠t} ψ^t_l(i) ln((1/h) K((x − μ)/h))`.
pub fn score_variable(
    stats: &SufficientStats,
    graph: &ContextGraph,
    weights: &[f64],
    h: Bandwidth,
    state: usize,
    var: usize,
) -> Result<StructureScore> {
    let cond = stats.conditioning_features(graph, state, var);
    if cond.len() != weights.len() {
        return Err(Error::Invariant("weight row does not match the conditioning set".into()));
    }
    let rss = stats.weighted_rss(state, var, &cond, weights);
    let kappa = graph.parents[state][var].len();
    let p = graph.ar_order[state][var];
    Ok(assemble_score(stats, state, var, kappa, p, rss, h))
}

fn assemble_score(
    stats: &SufficientStats,
    state: usize,
    var: usize,
    kappa: usize,
    p: usize,
    rss: f64,
    h: Bandwidth,
) -> StructureScore {
    let hv = h.value();
    let fit = -stats.gamma_sum[state] * (HALF_LN_2PI + hv.ln()) - rss / (2.0 * hv * hv);
    let penalty = structure_penalty(kappa, p, stats.last_t, stats.p_star);
    StructureScore {
        fit,
        penalty,
        total: fit - penalty,
        state,
        var,
        kappa,
        p,
    }
}

/// Refit `(M_im, h_im)` for the structure in `graph` and score it.
pub fn refit_and_score(
    stats: &SufficientStats,
    graph: &ContextGraph,
    state: usize,
    var: usize,
) -> Result<(Vec<f64>, Bandwidth, StructureScore)> {
    let cond = stats.conditioning_features(graph, state, var);
    let upd = solve_weights(stats, state, var, &cond);
    let rss = stats.weighted_rss(state, var, &cond, &upd.weights);
    let bw = bandwidth_from_rss(stats, state, var, rss)?;
    let score = assemble_score(
        stats,
        state,
        var,
        graph.parents[state][var].len(),
        graph.ar_order[state][var],
        rss,
        bw.h,
    );
    Ok((upd.weights, bw.h, score))
}

/// Moves for `(state, var)` that keep the state's graph acyclic and `p ≤ P*`,
/// in enumeration order: parents by ascending index, then the AR increment.
pub fn legal_moves(
    graph: &ContextGraph,
    p_star: usize,
    flags: SearchFlags,
    state: usize,
    var: usize,
) -> Vec<MoveKind> {
    let mut moves = Vec::new();
    if flags.parents {
        for v in 0..graph.n_vars() {
            if v == var || graph.parents[state][var].contains(&v) {
                continue;
            }
            // v → var closes a cycle iff var already reaches v
            if graph.reaches(state, var, v) {
                continue;
            }
            moves.push(MoveKind::AddParent { parent: v });
        }
    }
    if flags.ar && graph.ar_order[state][var] < p_star {
        moves.push(MoveKind::IncrementAr);
    }
    moves
}

pub fn apply_move(graph: &mut ContextGraph, state: usize, var: usize, kind: MoveKind) {
    match kind {
        MoveKind::AddParent { parent } => graph.parents[state][var].push(parent),
        MoveKind::IncrementAr => graph.ar_order[state][var] += 1,
    }
}

/// Greedy-forward search over every state and variable.
///
/// States are swept in index order, then variables; for each pair every
/// legal move is refit and scored, and the best one is accepted while it
/// beats the current total by more than [`ACCEPT_THRESHOLD`]. Equal totals go
/// to the move enumerated first. `per_state_budget` caps accepted moves per
/// state.
pub fn greedy_forward_search(
    model: &mut KdeAsHmmModel,
    stats: &SufficientStats,
    flags: SearchFlags,
    per_state_budget: Option<usize>,
) -> Result<Vec<AcceptedMove>> {
    let mut accepted = Vec::new();
    if !flags.any() {
        return Ok(accepted);
    }
    for i in 0..model.n_states {
        if !(stats.gamma_sum[i] > STARVATION_MASS) {
            continue;
        }
        let mut used = 0usize;
        for m in 0..model.n_vars() {
            let (_, _, mut current) = refit_and_score(stats, &model.graph, i, m)?;
            loop {
                if per_state_budget.is_some_and(|b| used >= b) {
                    break;
                }
                let mut best: Option<(MoveKind, Vec<f64>, Bandwidth, StructureScore)> = None;
                for kind in legal_moves(&model.graph, model.p_star, flags, i, m) {
                    let mut candidate = model.graph.clone();
                    apply_move(&mut candidate, i, m, kind);
                    let (w, h, score) = refit_and_score(stats, &candidate, i, m)?;
                    if best.as_ref().is_none_or(|b| score.total > b.3.total) {
                        best = Some((kind, w, h, score));
                    }
                }
                let Some((kind, w, h, score)) = best else { break };
                if score.total <= current.total + ACCEPT_THRESHOLD {
                    break;
                }
                apply_move(&mut model.graph, i, m, kind);
                model.weights.0[i][m] = w;
                model.h[i][m] = h;
                debug_assert!(model.graph.validate(model.p_star).is_ok());
                accepted.push(AcceptedMove {
                    state: i,
                    var: m,
                    kind,
                    score_before: current.total,
                    score_after: score.total,
                });
                current = score;
                used += 1;
            }
        }
    }
    Ok(accepted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemConfig {
    pub em: EmConfig,
    pub variant: Variant,
    pub sem_rounds: usize,
    #[serde(default)]
    pub per_state_budget: Option<usize>,
}

impl SemConfig {
    pub fn new(em: EmConfig, variant: Variant) -> Self {
        SemConfig {
            em,
            variant,
            sem_rounds: 1,
            per_state_budget: None,
        }
    }
}

/// EM to convergence, then alternate structure search and EM for
/// `sem_rounds` rounds. A round that accepts no move ends the loop.
pub fn sem_fit(series: &TimeSeries, config: &SemConfig) -> Result<(KdeAsHmmModel, FitReport)> {
    let (model, report) = em_fit(series, &config.em)?;
    sem_rounds(model, report, series, config)
}

/// As [`sem_fit`], starting from an existing model.
pub fn sem_fit_from(
    model: KdeAsHmmModel,
    series: &TimeSeries,
    config: &SemConfig,
) -> Result<(KdeAsHmmModel, FitReport)> {
    let (model, report) = em_fit_from(model, series, &config.em)?;
    sem_rounds(model, report, series, config)
}

fn sem_rounds(
    mut model: KdeAsHmmModel,
    mut report: FitReport,
    series: &TimeSeries,
    config: &SemConfig,
) -> Result<(KdeAsHmmModel, FitReport)> {
    let flags = config.variant.flags();
    for _ in 0..config.sem_rounds {
        if !flags.any() {
            break;
        }
        let started = std::time::Instant::now();
        let (_, stats) = e_step_stats(&model, series, config.em.block_size)?;
        let moves = greedy_forward_search(&mut model, &stats, flags, config.per_state_budget)?;
        report.wall_time_s += started.elapsed().as_secs_f64();
        if moves.is_empty() {
            break;
        }
        for mv in &moves {
            log::info!("accepted {:?} for state {}, var {}", mv.kind, mv.state, mv.var);
        }
        report.moves.extend(moves);
        let (next, more) = em_fit_from(model, series, &config.em)?;
        model = next;
        report.absorb(more);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_matches_hand_arithmetic() {
        let p = structure_penalty(1, 1, 100, 1);
        assert!((p - 0.5 * 102.0 * 100f64.ln()).abs() < 1e-12);
        assert!((p - 234.863_679_485).abs() < 1e-8);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("kde-xyz".parse::<Variant>().is_err());
        assert!(!Variant::KdeHmm.flags().any());
    }

    #[test]
    fn legal_moves_respect_acyclicity_and_order() {
        let mut g = ContextGraph::naive(1, 3);
        g.parents[0][1] = vec![0];
        g.parents[0][2] = vec![1];
        let flags = Variant::KdeAs.flags();
        // 0 is an ancestor of everything: nothing may point into it from below
        assert_eq!(legal_moves(&g, 1, flags, 0, 0), vec![MoveKind::IncrementAr]);
        assert_eq!(
            legal_moves(&g, 1, flags, 0, 2),
            vec![MoveKind::AddParent { parent: 0 }, MoveKind::IncrementAr]
        );
        g.ar_order[0][2] = 1;
        assert_eq!(legal_moves(&g, 1, flags, 0, 2), vec![MoveKind::AddParent { parent: 0 }]);
        assert!(legal_moves(&g, 1, Variant::KdeHmm.flags(), 0, 2).is_empty());
    }
}
