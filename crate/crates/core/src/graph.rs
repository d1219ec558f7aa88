//! Per-state dependency structure: within-time parents and autoregressive orders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Context-specific dependency graph.
///
/// For state `i` and variable `m`, `parents[i][m]` lists the variables
/// observed at the same instant that condition `m`, in the order their
/// kernel weights are stored, and `ar_order[i][m]` counts own lags
/// `1..=p`. Within-time arcs must form a DAG in every state; lag arcs
/// point backward in time and are exempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextGraph {
    pub parents: Vec<Vec<Vec<usize>>>,
    pub ar_order: Vec<Vec<usize>>,
}

impl ContextGraph {
    /// No arcs and no lags anywhere.
    pub fn naive(n_states: usize, n_vars: usize) -> Self {
        ContextGraph {
            parents: vec![vec![Vec::new(); n_vars]; n_states],
            ar_order: vec![vec![0; n_vars]; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.parents.len()
    }

    pub fn n_vars(&self) -> usize {
        self.parents.first().map_or(0, Vec::len)
    }

    /// Length of the conditioning vector `κ + p` for `(state, var)`.
    pub fn conditioning_len(&self, state: usize, var: usize) -> usize {
        self.parents[state][var].len() + self.ar_order[state][var]
    }

    pub fn n_arcs(&self, state: usize) -> usize {
        self.parents[state].iter().map(Vec::len).sum()
    }

    pub fn is_naive(&self) -> bool {
        self.parents.iter().flatten().all(Vec::is_empty)
            && self.ar_order.iter().flatten().all(|&p| p == 0)
    }

    /// Whether `ancestor` reaches `node` along within-time arcs of `state`.
    pub fn reaches(&self, state: usize, ancestor: usize, node: usize) -> bool {
        let n = self.n_vars();
        let mut seen = vec![false; n];
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v == ancestor {
                return true;
            }
            if std::mem::replace(&mut seen[v], true) {
                continue;
            }
            stack.extend(self.parents[state][v].iter().copied());
        }
        false
    }

    /// Topological order of the variables in `state` (parents first).
    pub fn topological_order(&self, state: usize) -> Result<Vec<usize>> {
        let n = self.n_vars();
        // Kahn's algorithm; ties resolved by lowest index.
        let mut indegree: Vec<usize> = (0..n).map(|v| self.parents[state][v].len()).collect();
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            for &p in &self.parents[state][v] {
                children[p].push(v);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            order.push(v);
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() == n {
            return Ok(order);
        }
        Err(Error::Cycle {
            state,
            nodes: self.find_cycle(state, &indegree),
        })
    }

    fn find_cycle(&self, state: usize, indegree: &[usize]) -> Vec<usize> {
        // Every remaining node has a remaining parent; walk parents until a repeat.
        let Some(start) = indegree.iter().position(|&d| d > 0) else {
            return Vec::new();
        };
        let mut path = vec![start];
        let mut cur = start;
        loop {
            let next = self.parents[state][cur]
                .iter()
                .copied()
                .find(|&p| indegree[p] > 0)
                .expect("remaining node has a remaining parent");
            if let Some(pos) = path.iter().position(|&v| v == next) {
                let mut cycle = path[pos..].to_vec();
                cycle.reverse();
                return cycle;
            }
            path.push(next);
            cur = next;
        }
    }

    /// Structural checks: shape, index ranges, AR bound and per-state acyclicity.
    pub fn validate(&self, p_star: usize) -> Result<()> {
        let n_vars = self.n_vars();
        if self.ar_order.len() != self.parents.len() {
            return Err(Error::Invariant("parents and ar_order disagree on state count".into()));
        }
        for (i, (par, ar)) in self.parents.iter().zip(&self.ar_order).enumerate() {
            if par.len() != n_vars || ar.len() != n_vars {
                return Err(Error::Invariant(format!("state {i} has the wrong variable count")));
            }
            for (m, ps) in par.iter().enumerate() {
                let mut sorted = ps.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != ps.len() {
                    return Err(Error::Invariant(format!("duplicate parent of var {m} in state {i}")));
                }
                if ps.iter().any(|&v| v >= n_vars || v == m) {
                    return Err(Error::Invariant(format!(
                        "invalid parent of var {m} in state {i}: {ps:?}"
                    )));
                }
                if ar[m] > p_star {
                    return Err(Error::Invariant(format!(
                        "AR order {} of var {m} in state {i} exceeds P* = {p_star}",
                        ar[m]
                    )));
                }
            }
            self.topological_order(i)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_graph_is_valid() {
        ContextGraph::naive(3, 4).validate(0).unwrap();
    }

    #[test]
    fn two_cycle_is_reported() {
        let mut g = ContextGraph::naive(2, 3);
        g.parents[1][1] = vec![0];
        g.parents[1][0] = vec![1];
        match g.validate(0) {
            Err(Error::Cycle { state, mut nodes }) => {
                assert_eq!(state, 1);
                nodes.sort();
                assert_eq!(nodes, vec![0, 1]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn chain_with_lags_is_valid() {
        let mut g = ContextGraph::naive(1, 3);
        g.parents[0][1] = vec![0];
        g.parents[0][2] = vec![1];
        g.ar_order[0] = vec![2, 2, 2];
        g.validate(2).unwrap();
        assert_eq!(g.topological_order(0).unwrap(), vec![0, 1, 2]);
        assert!(g.reaches(0, 0, 2));
        assert!(!g.reaches(0, 2, 0));
    }

    #[test]
    fn ar_bound_enforced() {
        let mut g = ContextGraph::naive(1, 2);
        g.ar_order[0][0] = 2;
        assert!(g.validate(1).is_err());
    }

    #[test]
    fn three_cycle_nodes() {
        let mut g = ContextGraph::naive(1, 4);
        g.parents[0][1] = vec![0];
        g.parents[0][2] = vec![1];
        g.parents[0][0] = vec![2];
        let Err(Error::Cycle { nodes, .. }) = g.validate(0) else {
            panic!("cycle expected");
        };
        let mut nodes = nodes;
        nodes.sort();
        assert_eq!(nodes, vec![0, 1, 2]);
    }
}
