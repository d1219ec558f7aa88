//! The KDE-AsHMM parameter set, kernel-center corrections and emission densities.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ContextGraph;
use crate::kernel::{log_sum_exp_unchecked, Bandwidth, HALF_LN_2PI};
use crate::series::TimeSeries;

pub const MODEL_FORMAT: &str = "kdehmm-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Layout of every kernel-weight row, recorded in model files.
pub const CONDITIONING_ORDER: &str = "parents-then-lags";

const SUM_TOL: f64 = 1e-12;

/// Number of time steps processed per parallel work unit.
pub(crate) const TIME_BLOCK: usize = 64;

/// Per state and variable, the correction weights applied to deviations of
/// the conditioning vector (parents in graph order, then lags `1..=p`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelWeights(pub Vec<Vec<Vec<f64>>>);

impl KernelWeights {
    /// All-zero weights shaped after `graph`.
    pub fn zeros(graph: &ContextGraph) -> Self {
        KernelWeights(
            (0..graph.n_states())
                .map(|i| {
                    (0..graph.n_vars())
                        .map(|m| vec![0.0; graph.conditioning_len(i, m)])
                        .collect()
                })
                .collect(),
        )
    }

    pub fn get(&self, state: usize, var: usize) -> &[f64] {
        &self.0[state][var]
    }
}

/// Full parameter set `{π, A, h, ω, M}` plus the retained training series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeAsHmmModel {
    pub n_states: usize,
    pub p_star: usize,
    pub pi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub graph: ContextGraph,
    pub weights: KernelWeights,
    pub h: Vec<Vec<Bandwidth>>,
    /// `ω[i][l − P*]` for training instants `l = P*..=L`.
    pub omega: Vec<Vec<f64>>,
    pub centers: TimeSeries,
}

/// Conditioning vector of `var` in `state` at row `t`: parents at `t`, then
/// own values at `t−1..t−p`.
pub fn conditioning_vector(
    graph: &ContextGraph,
    state: usize,
    var: usize,
    series: &TimeSeries,
    t: usize,
) -> Vec<f64> {
    let mut u: Vec<f64> = graph.parents[state][var]
        .iter()
        .map(|&v| series.get(t, v))
        .collect();
    u.extend((1..=graph.ar_order[state][var]).map(|r| series.get(t - r, var)));
    u
}

impl KdeAsHmmModel {
    pub fn n_vars(&self) -> usize {
        self.centers.n_features()
    }

    /// Number of kernel centers, `L + 1 − P*`.
    pub fn n_centers(&self) -> usize {
        self.centers.len() - self.p_star
    }

    /// Corrected kernel center `y^l_m + M_im (u^t − v^l)`.
    pub fn kernel_center(
        &self,
        state: usize,
        var: usize,
        center: usize,
        t: usize,
        series: &TimeSeries,
    ) -> Result<f64> {
        if state >= self.n_states || var >= self.n_vars() {
            return Err(Error::IndexOutOfRange(format!("state {state}, var {var}")));
        }
        if center < self.p_star || center >= self.centers.len() {
            return Err(Error::IndexOutOfRange(format!(
                "center {center} outside {}..{}",
                self.p_star,
                self.centers.len()
            )));
        }
        if t < self.p_star || t >= series.len() {
            return Err(Error::IndexOutOfRange(format!(
                "time {t} outside {}..{}",
                self.p_star,
                series.len()
            )));
        }
        if series.n_features() != self.n_vars() {
            return Err(Error::Invariant("series feature count differs from model".into()));
        }
        let u = conditioning_vector(&self.graph, state, var, series, t);
        let v = conditioning_vector(&self.graph, state, var, &self.centers, center);
        let w = self.weights.get(state, var);
        let shift: f64 = w.iter().zip(u.iter().zip(&v)).map(|(c, (a, b))| c * (a - b)).sum();
        Ok(self.centers.get(center, var) + shift)
    }

    /// `ln b_i(x^t)`. With `exclude_self`, `series` must be the training
    /// series and the component centered at `t` is dropped without
    /// renormalizing `ω`.
    pub fn emission_log_density(
        &self,
        state: usize,
        t: usize,
        series: &TimeSeries,
        exclude_self: bool,
    ) -> Result<f64> {
        if t < self.p_star || t >= series.len() {
            return Err(Error::IndexOutOfRange(format!(
                "time {t} outside {}..{}",
                self.p_star,
                series.len()
            )));
        }
        if state >= self.n_states {
            return Err(Error::IndexOutOfRange(format!("state {state}")));
        }
        let tables = EmissionTables::new(self, series, exclude_self)?;
        let mut buf = vec![0.0; self.n_centers()];
        let v = tables.log_emission(t, state, &mut buf);
        if v == f64::NEG_INFINITY {
            log::warn!("all mixture terms vanish for state {state} at t = {t}");
        }
        Ok(v)
    }

    /// Log emissions for every scored instant and state.
    pub fn emission_log_matrix(&self, series: &TimeSeries, exclude_self: bool) -> Result<LogEmissions> {
        let tables = EmissionTables::new(self, series, exclude_self)?;
        Ok(tables.matrix())
    }

    /// Validate shapes and the probability-simplex invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        let m = self.n_vars();
        if n == 0 {
            return Err(Error::Invariant("model has no states".into()));
        }
        if self.centers.len() < self.p_star + 2 {
            return Err(Error::Invariant(format!(
                "{} centers rows is too short for P* = {}",
                self.centers.len(),
                self.p_star
            )));
        }
        check_simplex("pi", &self.pi, n)?;
        if self.a.len() != n {
            return Err(Error::Invariant(format!("A has {} rows, expected {n}", self.a.len())));
        }
        for (i, row) in self.a.iter().enumerate() {
            check_simplex(&format!("row {i} of A"), row, n)?;
        }
        if self.omega.len() != n {
            return Err(Error::Invariant("omega has the wrong number of rows".into()));
        }
        for (i, row) in self.omega.iter().enumerate() {
            check_simplex(&format!("row {i} of omega"), row, self.n_centers())?;
        }
        if self.graph.n_states() != n || self.graph.n_vars() != m {
            return Err(Error::Invariant("graph shape does not match the model".into()));
        }
        self.graph.validate(self.p_star)?;
        if self.h.len() != n || self.h.iter().any(|r| r.len() != m) {
            return Err(Error::Invariant("bandwidth table has the wrong shape".into()));
        }
        if self.h.iter().flatten().any(|b| !(b.value() > 0.0 && b.value().is_finite())) {
            return Err(Error::Invariant("bandwidths must be positive and finite".into()));
        }
        if self.weights.0.len() != n {
            return Err(Error::Invariant("weights have the wrong number of states".into()));
        }
        for i in 0..n {
            if self.weights.0[i].len() != m {
                return Err(Error::Invariant(format!("weights of state {i} have wrong width")));
            }
            for v in 0..m {
                let w = &self.weights.0[i][v];
                if w.len() != self.graph.conditioning_len(i, v) {
                    return Err(Error::Invariant(format!(
                        "weights of state {i}, var {v} have length {}, expected {}",
                        w.len(),
                        self.graph.conditioning_len(i, v)
                    )));
                }
                if w.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Invariant("non-finite kernel weight".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self, provenance: Option<&serde_json::Value>) -> Result<String> {
        let doc = ModelFileRef {
            format: MODEL_FORMAT,
            format_version: MODEL_FORMAT_VERSION,
            conditioning_order: CONDITIONING_ORDER,
            model: self,
            provenance,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<serde_json::Value>)> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse("model document lacks format_version".into()))?;
        if version != u64::from(MODEL_FORMAT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let doc: ModelFile = serde_json::from_value(raw)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("unexpected document format '{}'", doc.format)));
        }
        if doc.conditioning_order != CONDITIONING_ORDER {
            return Err(Error::Parse(format!(
                "unsupported conditioning order '{}'",
                doc.conditioning_order
            )));
        }
        doc.model.validate()?;
        Ok((doc.model, doc.provenance))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with_provenance(path, None)
    }

    pub fn save_with_provenance(
        &self,
        path: impl AsRef<Path>,
        provenance: Option<&serde_json::Value>,
    ) -> Result<()> {
        let mut text = self.to_json(provenance)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text)?.0)
    }
}

fn check_simplex(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Invariant(format!("{name} has length {}, expected {len}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Invariant(format!("{name} has negative or non-finite entries")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::Invariant(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    format_version: u32,
    conditioning_order: &'a str,
    model: &'a KdeAsHmmModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<&'a serde_json::Value>,
}

#[derive(Deserialize)]
struct ModelFile {
    format: String,
    #[allow(dead_code)]
    format_version: u32,
    conditioning_order: String,
    model: KdeAsHmmModel,
    #[serde(default)]
    provenance: Option<serde_json::Value>,
}

/// `ln b_i(x^t)` for `t = first_t..`, stored row-major by time then state.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEmissions {
    pub first_t: usize,
    pub n_states: usize,
    pub values: Vec<f64>,
}

impl LogEmissions {
    pub fn new(first_t: usize, n_states: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % n_states.max(1), 0);
        LogEmissions {
            first_t,
            n_states,
            values,
        }
    }

    /// Number of scored instants.
    pub fn len(&self) -> usize {
        self.values.len() / self.n_states
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row for the `k`-th scored instant (time `first_t + k`).
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_states..(k + 1) * self.n_states]
    }
}

/// Precomputed pieces of the corrected kernel mixture for one (model, series) pair.
///
/// The center correction splits as `μ = (y^l − M·v^l) + M·u^t`, so each
/// mixture term only needs a per-center offset and a per-instant residual.
pub(crate) struct EmissionTables<'a> {
    pub model: &'a KdeAsHmmModel,
    pub exclude_self: bool,
    pub n_t: usize,
    /// `x^t_m − M_im·u^t`, indexed `[(k * N + i) * M + m]` with `k = t − P*`.
    resid: Vec<f64>,
    /// `y^l_m − M_im·v^l`, indexed `[(i * M + m) * L' + l']`.
    offsets: Vec<f64>,
    inv_h: Vec<f64>,
    /// `−Σ_m (ln h_im + ½ ln 2π)` per state.
    log_norm: Vec<f64>,
    log_omega: Vec<f64>,
}

impl<'a> EmissionTables<'a> {
    pub fn new(model: &'a KdeAsHmmModel, series: &TimeSeries, exclude_self: bool) -> Result<Self> {
        let p = model.p_star;
        let n = model.n_states;
        let m_vars = model.n_vars();
        if series.n_features() != m_vars {
            return Err(Error::Invariant(format!(
                "series has {} features, model expects {m_vars}",
                series.n_features()
            )));
        }
        if series.len() < p + 1 {
            return Err(Error::InsufficientData(format!(
                "series of length {} is shorter than P* + 1 = {}",
                series.len(),
                p + 1
            )));
        }
        if exclude_self && series.len() != model.centers.len() {
            return Err(Error::Invariant(
                "self-exclusion requires the training series itself".into(),
            ));
        }
        let n_t = series.len() - p;
        let n_c = model.n_centers();
        let mut resid = vec![0.0; n_t * n * m_vars];
        for k in 0..n_t {
            let t = k + p;
            for i in 0..n {
                for m in 0..m_vars {
                    let u = conditioning_vector(&model.graph, i, m, series, t);
                    let shift: f64 = model.weights.get(i, m).iter().zip(&u).map(|(w, x)| w * x).sum();
                    resid[(k * n + i) * m_vars + m] = series.get(t, m) - shift;
                }
            }
        }
        let mut offsets = vec![0.0; n * m_vars * n_c];
        for i in 0..n {
            for m in 0..m_vars {
                let w = model.weights.get(i, m);
                let base = (i * m_vars + m) * n_c;
                for lc in 0..n_c {
                    let l = lc + p;
                    let v = conditioning_vector(&model.graph, i, m, &model.centers, l);
                    let shift: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
                    offsets[base + lc] = model.centers.get(l, m) - shift;
                }
            }
        }
        let inv_h = model.h.iter().flatten().map(|b| 1.0 / b.value()).collect();
        let log_norm = model
            .h
            .iter()
            .map(|row| -row.iter().map(|b| b.value().ln() + HALF_LN_2PI).sum::<f64>())
            .collect();
        let log_omega = model.omega.iter().flatten().map(|w| w.ln()).collect();
        Ok(EmissionTables {
            model,
            exclude_self,
            n_t,
            resid,
            offsets,
            inv_h,
            log_norm,
            log_omega,
        })
    }

    /// Fill `out[l']` with `ln ω_il + Σ_m ln((1/h) K((x − μ)/h))` for time `t`.
    pub fn log_terms(&self, t: usize, state: usize, out: &mut [f64]) {
        let model = self.model;
        let p = model.p_star;
        let n = model.n_states;
        let m_vars = model.n_vars();
        let n_c = model.n_centers();
        let k = t - p;
        out.copy_from_slice(&self.log_omega[state * n_c..(state + 1) * n_c]);
        let ln = self.log_norm[state];
        for o in out.iter_mut() {
            *o += ln;
        }
        for m in 0..m_vars {
            let r = self.resid[(k * n + state) * m_vars + m];
            let ih = self.inv_h[state * m_vars + m];
            let offs = &self.offsets[(state * m_vars + m) * n_c..(state * m_vars + m + 1) * n_c];
            for (o, c) in out.iter_mut().zip(offs) {
                let z = (r - c) * ih;
                *o -= 0.5 * z * z;
            }
        }
        if self.exclude_self && k < n_c {
            // center index l = t sits at l' = t − P* = k
            out[k] = f64::NEG_INFINITY;
        }
    }

    pub fn log_emission(&self, t: usize, state: usize, buf: &mut [f64]) -> f64 {
        self.log_terms(t, state, buf);
        log_sum_exp_unchecked(buf)
    }

    pub fn matrix(&self) -> LogEmissions {
        let n = self.model.n_states;
        let p = self.model.p_star;
        let n_c = self.model.n_centers();
        let blocks: Vec<Vec<f64>> = (0..self.n_t.div_ceil(TIME_BLOCK))
            .into_par_iter()
            .map(|b| {
                let start = b * TIME_BLOCK;
                let end = (start + TIME_BLOCK).min(self.n_t);
                let mut buf = vec![0.0; n_c];
                let mut vals = Vec::with_capacity((end - start) * n);
                for k in start..end {
                    for i in 0..n {
                        vals.push(self.log_emission(k + p, i, &mut buf));
                    }
                }
                vals
            })
            .collect();
        let values: Vec<f64> = blocks.into_iter().flatten().collect();
        if values.contains(&f64::NEG_INFINITY) {
            log::warn!("some emission densities vanished (all mixture terms -inf)");
        }
        LogEmissions::new(p, n, values)
    }
}
