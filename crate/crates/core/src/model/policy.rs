//! Markov policies on a time grid.
//!
//! Policies are stored at the grid nodes `t_0, ..., t_K` and read as piecewise
//! constant on `[t_k, t_{k+1})`.

use thiserror::Error;

use super::{CtmdpModel, PROB_TOL};
use crate::dp::TimeGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy has {found} nodes, grid needs {expected}")]
    Nodes { found: usize, expected: usize },
    #[error("node {node} covers {found} states, model has {expected}")]
    States {
        node: usize,
        found: usize,
        expected: usize,
    },
    #[error("action index {action} out of range at (node {node}, state {state})")]
    Action {
        node: usize,
        state: usize,
        action: usize,
    },
    #[error("action distribution at (node {node}, state {state}) has {reason}")]
    Distribution {
        node: usize,
        state: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    /// `f(i, t_k)` indexed `[k][i]`.
    Deterministic(Vec<Vec<usize>>),
    /// `phi(a | i, t_k)` indexed `[k][i][a]`.
    Randomized(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovPolicy {
    grid: TimeGrid,
    kind: PolicyKind,
}

/// Action law of a policy at one `(node, state)`.
#[derive(Debug, Clone, Copy)]
pub enum ActionMix<'a> {
    Pure(usize),
    Mixed(&'a [f64]),
}

impl ActionMix<'_> {
    /// Non-zero `(action, probability)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (pure, mixed): (Option<usize>, &[f64]) = match *self {
            ActionMix::Pure(a) => (Some(a), &[]),
            ActionMix::Mixed(p) => (None, p),
        };
        pure.into_iter()
            .map(|a| (a, 1.0))
            .chain(mixed.iter().copied().enumerate().filter(|&(_, p)| p > 0.0))
    }

    /// `sum_a phi(a) f(a)`.
    pub fn expect(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        match *self {
            ActionMix::Pure(a) => f(a),
            ActionMix::Mixed(p) => p
                .iter()
                .enumerate()
                .filter(|&(_, &w)| w > 0.0)
                .map(|(a, &w)| w * f(a))
                .sum(),
        }
    }

    /// Inverse-CDF draw from a uniform `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        match *self {
            ActionMix::Pure(a) => a,
            ActionMix::Mixed(p) => {
                let mut acc = 0.0;
                let mut last = 0;
                for (a, &w) in p.iter().enumerate() {
                    if w <= 0.0 {
                        continue;
                    }
                    acc += w;
                    last = a;
                    if u < acc {
                        return a;
                    }
                }
                last
            }
        }
    }
}

impl MarkovPolicy {
    pub fn deterministic(
        model: &CtmdpModel,
        grid: TimeGrid,
        actions: Vec<Vec<usize>>,
    ) -> Result<Self, PolicyError> {
        let policy = Self {
            grid,
            kind: PolicyKind::Deterministic(actions),
        };
        policy.check(model)?;
        Ok(policy)
    }

    pub fn randomized(
        model: &CtmdpModel,
        grid: TimeGrid,
        probs: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, PolicyError> {
        let policy = Self {
            grid,
            kind: PolicyKind::Randomized(probs),
        };
        policy.check(model)?;
        Ok(policy)
    }

    /// Same action in a state at every time.
    pub fn stationary(
        model: &CtmdpModel,
        grid: TimeGrid,
        per_state: &[usize],
    ) -> Result<Self, PolicyError> {
        Self::deterministic(model, grid, vec![per_state.to_vec(); grid.n_nodes()])
    }

    /// Uniform over `A(i)` everywhere.
    pub fn uniform(model: &CtmdpModel, grid: TimeGrid) -> Self {
        let row: Vec<Vec<f64>> = (0..model.n_states())
            .map(|i| {
                let n = model.n_actions(i);
                vec![1.0 / n as f64; n]
            })
            .collect();
        Self {
            grid,
            kind: PolicyKind::Randomized(vec![row; grid.n_nodes()]),
        }
    }

    pub(crate) fn from_parts_unchecked(grid: TimeGrid, kind: PolicyKind) -> Self {
        Self { grid, kind }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn kind(&self) -> &PolicyKind {
        &self.kind
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, PolicyKind::Deterministic(_))
    }

    pub fn mix(&self, node: usize, state: usize) -> ActionMix<'_> {
        match &self.kind {
            PolicyKind::Deterministic(f) => ActionMix::Pure(f[node][state]),
            PolicyKind::Randomized(p) => ActionMix::Mixed(&p[node][state]),
        }
    }

    /// Action law in effect at time `t` (piecewise constant on grid cells).
    pub fn mix_at(&self, t: f64, state: usize) -> ActionMix<'_> {
        self.mix(self.grid.cell_of(t), state)
    }

    /// Deterministic action table, if any.
    pub fn actions(&self) -> Option<&[Vec<usize>]> {
        match &self.kind {
            PolicyKind::Deterministic(f) => Some(f),
            PolicyKind::Randomized(_) => None,
        }
    }

    pub fn check(&self, model: &CtmdpModel) -> Result<(), PolicyError> {
        let expected = self.grid.n_nodes();
        let n = model.n_states();
        match &self.kind {
            PolicyKind::Deterministic(f) => {
                if f.len() != expected {
                    return Err(PolicyError::Nodes {
                        found: f.len(),
                        expected,
                    });
                }
                for (k, row) in f.iter().enumerate() {
                    if row.len() != n {
                        return Err(PolicyError::States {
                            node: k,
                            found: row.len(),
                            expected: n,
                        });
                    }
                    for (i, &a) in row.iter().enumerate() {
                        if a >= model.n_actions(i) {
                            return Err(PolicyError::Action {
                                node: k,
                                state: i,
                                action: a,
                            });
                        }
                    }
                }
            }
            PolicyKind::Randomized(p) => {
                if p.len() != expected {
                    return Err(PolicyError::Nodes {
                        found: p.len(),
                        expected,
                    });
                }
                for (k, row) in p.iter().enumerate() {
                    if row.len() != n {
                        return Err(PolicyError::States {
                            node: k,
                            found: row.len(),
                            expected: n,
                        });
                    }
                    for (i, dist) in row.iter().enumerate() {
                        if dist.len() != model.n_actions(i) {
                            return Err(PolicyError::Distribution {
                                node: k,
                                state: i,
                                reason: format!(
                                    "{} entries for {} actions",
                                    dist.len(),
                                    model.n_actions(i)
                                ),
                            });
                        }
                        if dist.iter().any(|&x| !(x >= 0.0)) {
                            return Err(PolicyError::Distribution {
                                node: k,
                                state: i,
                                reason: "a negative entry".into(),
                            });
                        }
                        let s: f64 = dist.iter().sum();
                        if (s - 1.0).abs() > PROB_TOL {
                            return Err(PolicyError::Distribution {
                                node: k,
                                state: i,
                                reason: format!("total mass {s}"),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
