//! Finite CTMDP instances.
//!
//! A [`CtmdpModel`] is the computable truncation `S_m = { i : w(i) <= m }` of a
//! denumerable controlled jump process together with finite action grids, dense
//! rate and cost tables, the horizon, an initial distribution and the weight
//! function used by the drift conditions.
//!
//! Structural defects (ragged tables, out-of-range dimensions) are rejected by
//! [`CtmdpModel::new`]. Semantic defects (non-conservative rows, negative
//! off-diagonal rates, a mis-normalized initial law) are data: they are
//! reported by [`validate_model`] so that callers can print all of them at once.

mod birth_death;
pub(crate) mod drift;
mod file;
mod policy;

pub use birth_death::{make_birth_death, BirthDeath, LinearCost};
pub use drift::{certify_drift, AssumptionCheck, DriftCertificate, DriftConstants};
pub use file::{load_model, parse_model, LoadedModel, ModelFileError};
pub use policy::{ActionMix, MarkovPolicy, PolicyError, PolicyKind};

use std::fmt;

use thiserror::Error;

/// Conservativeness tolerance on rate rows.
pub const RATE_TOL: f64 = 1e-9;
/// Tolerance on probability vectors (initial law, randomized policy rows).
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("at least one cost table (c_0) is required")]
    NoCosts,
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// One semantic defect found by [`validate_model`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `sum_j q(j|i,a)` differs from zero by more than [`RATE_TOL`].
    RowSum {
        state: usize,
        action: usize,
        residual: f64,
    },
    /// `q(j|i,a) < 0` for some `j != i`.
    NegativeRate {
        state: usize,
        action: usize,
        target: usize,
        rate: f64,
    },
    EmptyActions {
        state: usize,
    },
    NonFinite {
        table: &'static str,
        state: usize,
        action: usize,
    },
    WeightBelowOne {
        state: usize,
        weight: f64,
    },
    /// `w(i) > m`, i.e. the state does not belong to `S_m`.
    OutsideTruncation {
        state: usize,
        weight: f64,
        level: f64,
    },
    NegativeInitialMass {
        state: usize,
        mass: f64,
    },
    InitialSum {
        residual: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::RowSum {
                state,
                action,
                residual,
            } => write!(
                f,
                "rate row (i={state}, a={action}) is not conservative: residual {residual:+e}"
            ),
            Violation::NegativeRate {
                state,
                action,
                target,
                rate,
            } => write!(
                f,
                "negative off-diagonal rate q({target}|{state},{action}) = {rate:e}"
            ),
            Violation::EmptyActions { state } => write!(f, "state {state} has no actions"),
            Violation::NonFinite {
                table,
                state,
                action,
            } => {
                write!(
                    f,
                    "non-finite entry in {table} table at (i={state}, a={action})"
                )
            }
            Violation::WeightBelowOne { state, weight } => {
                write!(f, "weight w({state}) = {weight} is below 1")
            }
            Violation::OutsideTruncation {
                state,
                weight,
                level,
            } => write!(
                f,
                "state {state} has w = {weight} above truncation level {level}"
            ),
            Violation::NegativeInitialMass { state, mass } => {
                write!(
                    f,
                    "initial distribution has negative mass {mass:e} at state {state}"
                )
            }
            Violation::InitialSum { residual } => {
                write!(f, "initial distribution sums to 1 {residual:+e}")
            }
        }
    }
}

/// Off-diagonal support of one rate row `q(.|i,a)` plus its diagonal entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub diag: f64,
    pub off: Vec<(usize, f64)>,
}

impl RateRow {
    /// `sum_j q(j|i,a) g(j)` for the row's own state `i`.
    #[inline]
    pub fn apply(&self, state: usize, g: &[f64]) -> f64 {
        let mut acc = self.diag * g[state];
        for &(j, q) in &self.off {
            acc += q * g[j];
        }
        acc
    }

    pub fn exit_rate(&self) -> f64 {
        self.off.iter().map(|&(_, q)| q).sum()
    }
}

/// Raw ingredients of a model, checked by [`CtmdpModel::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    /// `actions[i][a]` is the action point (a vector of reals) of action `a` in state `i`.
    pub actions: Vec<Vec<Vec<f64>>>,
    /// `rates[i][a][j] = q(j | i, a)`.
    pub rates: Vec<Vec<Vec<f64>>>,
    /// `costs[n][i][a] = c_n(i, a)`; `n = 0` is the objective.
    pub costs: Vec<Vec<Vec<f64>>>,
    /// `d_1..d_N`, one per constraint cost.
    pub constraint_bounds: Vec<f64>,
    pub horizon: f64,
    pub initial_dist: Vec<f64>,
    pub weight: Vec<f64>,
    /// Truncation level `m`; defaults to `max_i w(i)`.
    pub truncation_level: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmdpModel {
    actions: Vec<Vec<Vec<f64>>>,
    rates: Vec<Vec<Vec<f64>>>,
    costs: Vec<Vec<Vec<f64>>>,
    constraint_bounds: Vec<f64>,
    horizon: f64,
    initial_dist: Vec<f64>,
    weight: Vec<f64>,
    truncation_level: f64,
    rows: Vec<Vec<RateRow>>,
    q_star: Vec<f64>,
}

impl CtmdpModel {
    pub fn new(parts: ModelParts) -> Result<Self, ModelError> {
        let ModelParts {
            actions,
            rates,
            costs,
            constraint_bounds,
            horizon,
            initial_dist,
            weight,
            truncation_level,
        } = parts;

        let n = actions.len();
        if n == 0 {
            return Err(ModelError::Dimension("model has no states".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::Horizon(horizon));
        }
        if rates.len() != n {
            return Err(ModelError::Dimension(format!(
                "rate table covers {} states, expected {n}",
                rates.len()
            )));
        }
        for (i, (acts, rows)) in actions.iter().zip(&rates).enumerate() {
            if rows.len() != acts.len() {
                return Err(ModelError::Dimension(format!(
                    "state {i}: {} rate rows for {} actions",
                    rows.len(),
                    acts.len()
                )));
            }
            if let Some(a) = rows.iter().position(|row| row.len() != n) {
                return Err(ModelError::Dimension(format!(
                    "rate row (i={i}, a={a}) has length {}, expected {n}",
                    rows[a].len()
                )));
            }
        }
        if costs.is_empty() {
            return Err(ModelError::NoCosts);
        }
        for (c, table) in costs.iter().enumerate() {
            if table.len() != n {
                return Err(ModelError::Dimension(format!(
                    "cost table {c} covers {} states, expected {n}",
                    table.len()
                )));
            }
            for (i, row) in table.iter().enumerate() {
                if row.len() != actions[i].len() {
                    return Err(ModelError::Dimension(format!(
                        "cost table {c}, state {i}: {} entries for {} actions",
                        row.len(),
                        actions[i].len()
                    )));
                }
            }
        }
        if constraint_bounds.len() + 1 != costs.len() {
            return Err(ModelError::Dimension(format!(
                "{} constraint bounds for {} constraint costs",
                constraint_bounds.len(),
                costs.len() - 1
            )));
        }
        if initial_dist.len() != n {
            return Err(ModelError::Dimension(format!(
                "initial distribution has length {}, expected {n}",
                initial_dist.len()
            )));
        }
        if weight.len() != n {
            return Err(ModelError::Dimension(format!(
                "weight has length {}, expected {n}",
                weight.len()
            )));
        }

        let truncation_level = truncation_level
            .unwrap_or_else(|| weight.iter().copied().fold(f64::NEG_INFINITY, f64::max));

        let rows: Vec<Vec<RateRow>> = rates
            .iter()
            .enumerate()
            .map(|(i, per_action)| {
                per_action
                    .iter()
                    .map(|row| RateRow {
                        diag: row[i],
                        off: row
                            .iter()
                            .enumerate()
                            .filter(|&(j, &q)| j != i && q != 0.0)
                            .map(|(j, &q)| (j, q))
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        let q_star = rows
            .iter()
            .map(|per_action| {
                per_action
                    .iter()
                    .map(|r| r.diag.abs().max(r.exit_rate()))
                    .fold(0.0, f64::max)
            })
            .collect();

        Ok(Self {
            actions,
            rates,
            costs,
            constraint_bounds,
            horizon,
            initial_dist,
            weight,
            truncation_level,
            rows,
            q_star,
        })
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }

    pub fn n_actions(&self, state: usize) -> usize {
        self.actions[state].len()
    }

    /// Total number of state-action pairs.
    pub fn n_pairs(&self) -> usize {
        self.actions.iter().map(Vec::len).sum()
    }

    pub fn max_actions(&self) -> usize {
        self.actions.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn action_point(&self, state: usize, action: usize) -> &[f64] {
        &self.actions[state][action]
    }

    pub fn actions(&self) -> &[Vec<Vec<f64>>] {
        &self.actions
    }

    /// `q(target | state, action)`.
    pub fn rate(&self, state: usize, action: usize, target: usize) -> f64 {
        self.rates[state][action][target]
    }

    pub fn rates(&self) -> &[Vec<Vec<f64>>] {
        &self.rates
    }

    pub fn rate_row(&self, state: usize, action: usize) -> &RateRow {
        &self.rows[state][action]
    }

    /// Number of cost tables, `N + 1`.
    pub fn n_costs(&self) -> usize {
        self.costs.len()
    }

    /// Number of constraints `N`.
    pub fn n_constraints(&self) -> usize {
        self.constraint_bounds.len()
    }

    pub fn cost(&self, index: usize, state: usize, action: usize) -> f64 {
        self.costs[index][state][action]
    }

    pub fn costs(&self) -> &[Vec<Vec<f64>>] {
        &self.costs
    }

    pub fn constraint_bounds(&self) -> &[f64] {
        &self.constraint_bounds
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn weight(&self, state: usize) -> f64 {
        self.weight[state]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn truncation_level(&self) -> f64 {
        self.truncation_level
    }

    /// `q*(i) = max_a |q(i|i,a)|`.
    pub fn q_star(&self, state: usize) -> f64 {
        self.q_star[state]
    }

    pub fn max_q_star(&self) -> f64 {
        self.q_star.iter().copied().fold(0.0, f64::max)
    }

    /// `sum_i gamma(i) f(i)`.
    pub fn initial_expectation(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.initial_dist
            .iter()
            .enumerate()
            .map(|(i, &p)| p * f(i))
            .sum()
    }

    /// Scalarized cost table `sum_n weights[n] * c_n(i, a)`, indexed `[i][a]`.
    pub fn scalarized_costs(&self, weights: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n_states())
            .map(|i| {
                (0..self.n_actions(i))
                    .map(|a| {
                        weights
                            .iter()
                            .zip(&self.costs)
                            .map(|(&w, table)| if w == 0.0 { 0.0 } else { w * table[i][a] })
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn with_constraint_bounds(mut self, bounds: Vec<f64>) -> Result<Self, ModelError> {
        if bounds.len() != self.constraint_bounds.len() {
            return Err(ModelError::Dimension(format!(
                "{} constraint bounds for {} constraint costs",
                bounds.len(),
                self.constraint_bounds.len()
            )));
        }
        self.constraint_bounds = bounds;
        Ok(self)
    }

    pub fn with_initial_dist(mut self, dist: Vec<f64>) -> Result<Self, ModelError> {
        if dist.len() != self.n_states() {
            return Err(ModelError::Dimension(format!(
                "initial distribution has length {}, expected {}",
                dist.len(),
                self.n_states()
            )));
        }
        self.initial_dist = dist;
        Ok(self)
    }

    pub fn to_parts(&self) -> ModelParts {
        ModelParts {
            actions: self.actions.clone(),
            rates: self.rates.clone(),
            costs: self.costs.clone(),
            constraint_bounds: self.constraint_bounds.clone(),
            horizon: self.horizon,
            initial_dist: self.initial_dist.clone(),
            weight: self.weight.clone(),
            truncation_level: Some(self.truncation_level),
        }
    }
}

/// Checks every semantic invariant of `model`; an empty list means the model is valid.
pub fn validate_model(model: &CtmdpModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.n_states();

    for i in 0..n {
        if model.n_actions(i) == 0 {
            out.push(Violation::EmptyActions { state: i });
        }
        for a in 0..model.n_actions(i) {
            let row = &model.rates[i][a];
            if row.iter().any(|q| !q.is_finite()) {
                out.push(Violation::NonFinite {
                    table: "rate",
                    state: i,
                    action: a,
                });
                continue;
            }
            for (j, &q) in row.iter().enumerate() {
                if j != i && q < 0.0 {
                    out.push(Violation::NegativeRate {
                        state: i,
                        action: a,
                        target: j,
                        rate: q,
                    });
                }
            }
            let residual: f64 = row.iter().sum();
            if residual.abs() > RATE_TOL {
                out.push(Violation::RowSum {
                    state: i,
                    action: a,
                    residual,
                });
            }
            if model.actions[i][a].iter().any(|x| !x.is_finite()) {
                out.push(Violation::NonFinite {
                    table: "action",
                    state: i,
                    action: a,
                });
            }
            for table in &model.costs {
                if !table[i][a].is_finite() {
                    out.push(Violation::NonFinite {
                        table: "cost",
                        state: i,
                        action: a,
                    });
                    break;
                }
            }
        }

        let w = model.weight[i];
        if !(w >= 1.0) {
            out.push(Violation::WeightBelowOne {
                state: i,
                weight: w,
            });
        }
        if w > model.truncation_level {
            out.push(Violation::OutsideTruncation {
                state: i,
                weight: w,
                level: model.truncation_level,
            });
        }
        let p = model.initial_dist[i];
        if !(p >= 0.0) {
            out.push(Violation::NegativeInitialMass { state: i, mass: p });
        }
    }

    let residual = model.initial_dist.iter().sum::<f64>() - 1.0;
    if !(residual.abs() <= PROB_TOL) {
        out.push(Violation::InitialSum { residual });
    }
    out
}
