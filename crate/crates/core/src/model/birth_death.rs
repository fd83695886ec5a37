//! Controlled birth-death system on `{0, 1, ..., m-1}`.
//!
//! Actions are `a = (a1, a2)` with `a1` in `[-lambda, lambda]` shifting the birth
//! rate and `a2` in `[-mu, mu]` shifting the death rate; state 0 only admits
//! `a2 = 0`. Rates in state `i >= 1`:
//!
//! ```text
//! q(i+1 | i, a) = lambda*i + a1
//! q(i-1 | i, a) = mu*i + a2
//! q(i   | i, a) = -(lambda+mu)*i - a1 - a2
//! ```
//!
//! and `q(1|0,a) = -q(0|0,a) = lambda + a1`. At the last retained state `m-1`
//! the birth rate is folded back into the diagonal so the row stays conservative.

use serde::{Deserialize, Serialize};

use super::{CtmdpModel, ModelError, ModelParts};

/// `c(i, a) = constant + state*i + busy*[i >= 1] + a1*a_1 + a2*a_2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearCost {
    pub constant: f64,
    pub state: f64,
    pub busy: f64,
    pub a1: f64,
    pub a2: f64,
}

impl LinearCost {
    pub fn holding() -> Self {
        Self {
            state: 1.0,
            ..Self::default()
        }
    }

    /// Control effort in `[0, 2]`: `(lambda - a1)/(2 lambda)` plus, in busy
    /// states, `(mu + a2)/(2 mu)`. Zero at `a = (lambda, -mu)`.
    pub fn effort(lambda: f64, mu: f64) -> Self {
        Self {
            constant: 0.5,
            busy: 0.5,
            a1: -0.5 / lambda,
            a2: 0.5 / mu,
            ..Self::default()
        }
    }

    pub fn eval(&self, state: usize, a1: f64, a2: f64) -> f64 {
        let busy = if state >= 1 { self.busy } else { 0.0 };
        self.constant + self.state * state as f64 + busy + self.a1 * a1 + self.a2 * a2
    }

    /// Smallest `M` with `|c(i,a)| <= M (i+1)` over the whole infinite action box.
    pub fn growth_bound(&self, lambda: f64, mu: f64) -> f64 {
        let ctrl = self.a1.abs() * lambda + self.a2.abs() * mu;
        let base = self.constant.abs() + self.busy.abs() + ctrl;
        // |c| <= |state| i + base <= max(|state|, base) (i + 1)
        self.state.abs().max(base)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirthDeath {
    pub lambda: f64,
    pub mu: f64,
    /// Truncation level `m`; the retained states are `0..m`.
    pub truncation: usize,
    /// Grid points per action axis.
    pub grid: usize,
    /// `c_0, c_1, ..., c_N`.
    pub costs: Vec<LinearCost>,
    pub constraint_bounds: Vec<f64>,
    pub horizon: f64,
    pub initial_dist: Vec<f64>,
}

impl BirthDeath {
    /// Holding cost only, start in state 0, horizon 1.
    pub fn new(lambda: f64, mu: f64, truncation: usize, grid: usize) -> Self {
        let mut initial_dist = vec![0.0; truncation.max(1)];
        initial_dist[0] = 1.0;
        Self {
            lambda,
            mu,
            truncation,
            grid,
            costs: vec![LinearCost::holding()],
            constraint_bounds: vec![],
            horizon: 1.0,
            initial_dist,
        }
    }

    pub fn with_costs(mut self, costs: Vec<LinearCost>, bounds: Vec<f64>) -> Self {
        self.costs = costs;
        self.constraint_bounds = bounds;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn starting_at(mut self, state: usize) -> Self {
        self.initial_dist = vec![0.0; self.truncation.max(1)];
        if state < self.initial_dist.len() {
            self.initial_dist[state] = 1.0;
        }
        self
    }

    /// Smallest cost growth constant valid for all cost tables.
    pub fn cost_bound(&self) -> f64 {
        self.costs
            .iter()
            .map(|c| c.growth_bound(self.lambda, self.mu))
            .fold(0.0, f64::max)
    }

    pub fn build(&self) -> Result<CtmdpModel, ModelError> {
        make_birth_death(self)
    }
}

fn axis(half_width: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| -half_width + 2.0 * half_width * k as f64 / (points - 1) as f64)
        .collect()
}

pub fn make_birth_death(spec: &BirthDeath) -> Result<CtmdpModel, ModelError> {
    let BirthDeath {
        lambda,
        mu,
        truncation: m,
        grid,
        ..
    } = *spec;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ModelError::Parameter(format!(
            "birth rate must be positive, got {lambda}"
        )));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(ModelError::Parameter(format!(
            "death rate must be positive, got {mu}"
        )));
    }
    if m < 2 {
        return Err(ModelError::Parameter(format!(
            "truncation level must be >= 2, got {m}"
        )));
    }
    if grid < 2 {
        return Err(ModelError::Parameter(format!(
            "action grid must be >= 2, got {grid}"
        )));
    }

    let births = axis(lambda, grid);
    let deaths = axis(mu, grid);
    let mut actions = Vec::with_capacity(m);
    let mut rates = Vec::with_capacity(m);
    for i in 0..m {
        let points: Vec<Vec<f64>> = if i == 0 {
            births.iter().map(|&a1| vec![a1, 0.0]).collect()
        } else {
            births
                .iter()
                .flat_map(|&a1| deaths.iter().map(move |&a2| vec![a1, a2]))
                .collect()
        };
        let rows = points
            .iter()
            .map(|p| {
                let (a1, a2) = (p[0], p[1]);
                let x = i as f64;
                let mut row = vec![0.0; m];
                let up = if i == 0 { lambda + a1 } else { lambda * x + a1 };
                let down = if i == 0 { 0.0 } else { mu * x + a2 };
                if i + 1 < m {
                    row[i + 1] = up;
                    row[i] -= up;
                }
                if i > 0 {
                    row[i - 1] = down;
                    row[i] -= down;
                }
                row
            })
            .collect();
        actions.push(points);
        rates.push(rows);
    }

    let costs = spec
        .costs
        .iter()
        .map(|c| {
            actions
                .iter()
                .enumerate()
                .map(|(i, pts)| pts.iter().map(|p| c.eval(i, p[0], p[1])).collect())
                .collect()
        })
        .collect();

    CtmdpModel::new(ModelParts {
        actions,
        rates,
        costs,
        constraint_bounds: spec.constraint_bounds.clone(),
        horizon: spec.horizon,
        initial_dist: spec.initial_dist.clone(),
        weight: (0..m).map(|i| i as f64 + 1.0).collect(),
        truncation_level: Some(m as f64),
    })
}
