//! Nonlinear-Gaussian context-specific data with patterned hidden sequences.
//!
//! In state `i`, variable `m` is drawn as
//! `N(Σ_k c_k (V_k² − e) + Σ_r d_r x_m^{t−r}, σ²)` in the topological order
//! of that state's graph. History before the first sample is zero.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ContextGraph;
use crate::series::TimeSeries;

pub const SPEC_FORMAT: &str = "kdehmm-synthetic-spec";
pub const SPEC_FORMAT_VERSION: u32 = 1;

const DEFAULT_SPEC: &str = include_str!("../fixtures/synthetic_default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    pub parents: Vec<usize>,
    /// One coefficient per parent.
    pub c: Vec<f64>,
    /// Lag coefficients `d_1..d_p`.
    pub ar: Vec<f64>,
    pub e: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub vars: Vec<VarSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub state: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub format: String,
    pub format_version: u32,
    pub var_names: Vec<String>,
    /// Variables that must be state-independent noise.
    #[serde(default)]
    pub noise_vars: Vec<usize>,
    #[serde(default)]
    pub burn_in: usize,
    pub pattern: Vec<Segment>,
    pub states: Vec<StateSpec>,
}

impl SyntheticSpec {
    /// Three states over seven variables; the last two are pure noise.
    pub fn default_benchmark() -> Self {
        let spec: SyntheticSpec =
            serde_json::from_str(DEFAULT_SPEC).expect("bundled synthetic spec parses");
        spec.validate().expect("bundled synthetic spec is valid");
        spec
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(SPEC_FORMAT_VERSION)) {
            return Err(Error::Version {
                found: version.map_or(0, |v| u32::try_from(v).unwrap_or(u32::MAX)),
                expected: SPEC_FORMAT_VERSION,
            });
        }
        let spec: SyntheticSpec = serde_json::from_value(raw)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn max_ar(&self) -> usize {
        self.states
            .iter()
            .flat_map(|s| s.vars.iter().map(|v| v.ar.len()))
            .max()
            .unwrap_or(0)
    }

    /// Generating structure as a [`ContextGraph`].
    pub fn graph(&self) -> ContextGraph {
        ContextGraph {
            parents: self
                .states
                .iter()
                .map(|s| s.vars.iter().map(|v| v.parents.clone()).collect())
                .collect(),
            ar_order: self
                .states
                .iter()
                .map(|s| s.vars.iter().map(|v| v.ar.len()).collect())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != SPEC_FORMAT {
            return Err(Error::Parse(format!("unexpected spec format '{}'", self.format)));
        }
        let m = self.n_vars();
        if self.states.is_empty() || m == 0 {
            return Err(Error::Invariant("spec needs states and variables".into()));
        }
        if self.pattern.is_empty() {
            return Err(Error::Invariant("empty state pattern".into()));
        }
        for seg in &self.pattern {
            if seg.state >= self.n_states() || seg.length == 0 {
                return Err(Error::Invariant(format!("invalid pattern segment {seg:?}")));
            }
        }
        for (i, s) in self.states.iter().enumerate() {
            if s.vars.len() != m {
                return Err(Error::Invariant(format!("state {i} describes {} vars", s.vars.len())));
            }
            for (v, vs) in s.vars.iter().enumerate() {
                if vs.c.len() != vs.parents.len() {
                    return Err(Error::Invariant(format!(
                        "state {i}, var {v}: {} coefficients for {} parents",
                        vs.c.len(),
                        vs.parents.len()
                    )));
                }
                if !(vs.sigma > 0.0) || !vs.e.is_finite() {
                    return Err(Error::Invariant(format!("state {i}, var {v}: bad sigma or offset")));
                }
            }
        }
        self.graph().validate(self.max_ar())?;
        for &v in &self.noise_vars {
            if v >= m {
                return Err(Error::Invariant(format!("noise variable {v} out of range")));
            }
            let first = &self.states[0].vars[v];
            for s in &self.states {
                let vs = &s.vars[v];
                if !vs.parents.is_empty() || !vs.ar.is_empty() || vs.sigma != first.sigma {
                    return Err(Error::Invariant(format!(
                        "noise variable {v} must be parentless, lag-free and state independent"
                    )));
                }
            }
            for s in &self.states {
                if s.vars.iter().any(|vs| vs.parents.contains(&v)) {
                    return Err(Error::Invariant(format!("noise variable {v} has children")));
                }
            }
        }
        Ok(())
    }
}

/// Scale the base pattern to `length`, keeping every segment.
///
/// Durations are rounded proportionally with the residual assigned to the
/// last segment; a segment never drops below one step while
/// `length ≥ #segments`.
pub fn gen_state_sequence(spec: &SyntheticSpec, length: usize) -> Result<Vec<usize>> {
    if spec.pattern.is_empty() {
        return Err(Error::Invariant("empty state pattern".into()));
    }
    if length == 0 {
        return Err(Error::InsufficientData("sequence length must be positive".into()));
    }
    let base: usize = spec.pattern.iter().map(|s| s.length).sum();
    let k = spec.pattern.len();
    let mut lens: Vec<usize> = spec
        .pattern
        .iter()
        .map(|s| ((s.length * length) as f64 / base as f64).round() as usize)
        .collect();
    if length >= k {
        lens.iter_mut().for_each(|l| *l = (*l).max(1));
    }
    let mut total: usize = lens.iter().sum();
    // residual to the last segment; borrow from the longest if it would vanish
    while total != length {
        if total < length {
            lens[k - 1] += length - total;
            total = length;
        } else {
            let excess = total - length;
            let floor = usize::from(length >= k);
            let last_room = lens[k - 1].saturating_sub(floor);
            let take = excess.min(last_room);
            if take > 0 {
                lens[k - 1] -= take;
                total -= take;
            } else {
                let j = (0..k).max_by_key(|&j| (lens[j], std::cmp::Reverse(j))).unwrap();
                lens[j] -= 1;
                total -= 1;
            }
        }
    }
    Ok(spec
        .pattern
        .iter()
        .zip(&lens)
        .flat_map(|(s, &n)| std::iter::repeat_n(s.state, n))
        .collect())
}

/// Sample observations along `states`; labels carry the generating state.
pub fn gen_observations(spec: &SyntheticSpec, states: &[usize], seed: u64) -> Result<TimeSeries> {
    spec.validate()?;
    if states.is_empty() {
        return Err(Error::InsufficientData("empty state sequence".into()));
    }
    if let Some(&s) = states.iter().find(|&&s| s >= spec.n_states()) {
        return Err(Error::Invariant(format!("state {s} not in spec")));
    }
    let graph = spec.graph();
    let orders: Vec<Vec<usize>> = (0..spec.n_states())
        .map(|i| graph.topological_order(i))
        .collect::<Result<_>>()?;
    let m = spec.n_vars();
    let max_lag = spec.max_ar();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = spec.burn_in + states.len();
    // zero history ahead of the first sample
    let mut buf = vec![0.0; (max_lag + total) * m];
    for step in 0..total {
        let state = if step < spec.burn_in { states[0] } else { states[step - spec.burn_in] };
        let row = max_lag + step;
        for &v in &orders[state] {
            let vs = &spec.states[state].vars[v];
            let mut mean = 0.0;
            for (&p, &c) in vs.parents.iter().zip(&vs.c) {
                let parent = buf[row * m + p];
                mean += c * (parent * parent - vs.e);
            }
            for (r, &d) in vs.ar.iter().enumerate() {
                mean += d * buf[(row - r - 1) * m + v];
            }
            let z: f64 = rng.sample(StandardNormal);
            buf[row * m + v] = mean + vs.sigma * z;
        }
    }
    let start = (max_lag + spec.burn_in) * m;
    let series = TimeSeries::from_flat(spec.var_names.clone(), buf[start..].to_vec())?;
    series.with_labels(states.iter().map(|s| s.to_string()).collect())
}
