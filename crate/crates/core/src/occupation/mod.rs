//! Discretized occupation measures and the constrained problem.
//!
//! An occupation grid holds `y(k, i, a)` on every time cell `[t_k, t_{k+1})`,
//! normalized so that each cell carries total mass one. The measure it stands
//! for is `eta(cell, i, a) = y(k, i, a) dt / T`.
//!
//! A grid is consistent with the dynamics when, for every test function `g`,
//!
//! ```text
//! sum_k dt sum_{i,a} y(k,i,a) sum_j G(j, t_k) q(j|i,a)
//!     = sum_k dt sum_i g(i, t_k) (sum_a y(k,i,a) - gamma(i)),
//! ```
//!
//! where `G(j, t) = int_t^T g(j, v) dv`. [`check_characterization`] evaluates
//! the difference of both sides.

mod dual;
mod lp;

use std::io::{self, Write};

use thiserror::Error;

use crate::dp::{DpError, TimeGrid};
use crate::lp::{LpError, LpStatus};
use crate::model::{CtmdpModel, MarkovPolicy, PolicyError, PolicyKind};

pub use dual::{
    discrete_dual_value, dual_value, lagrangian_dual, lagrangian_dual_against, DualCertificate,
    DualSearch, DUAL_FEASIBILITY_TOL,
};
pub use lp::{
    build_constrained_lp, euler_occupation, solve_constrained, solve_constrained_dense,
    solve_constrained_with, structural_residuals, ColumnGeneration, ConstrainedSolution, LpLayout,
    SolveMethod, MAX_DENSE_CELLS,
};

/// Per-cell normalization tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Cells whose state mass is at most this get the uniform action law.
pub const ZERO_MASS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OccupationError {
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("the model has no constraint costs")]
    NoConstraints,
    #[error("dense LP with {vars} variables and {rows} rows exceeds the size limit")]
    TooLarge { vars: usize, rows: usize },
    #[error("linear program status: {}", .0.as_str())]
    Status(LpStatus),
    #[error("occupation grid: {0}")]
    Shape(String),
}

/// `y(k, i, a)` for cells `k = 0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationGrid {
    grid: TimeGrid,
    mass: Vec<Vec<Vec<f64>>>,
}

impl OccupationGrid {
    /// Checks shape, non-negativity and per-cell normalization.
    pub fn new(
        model: &CtmdpModel,
        grid: TimeGrid,
        mass: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, OccupationError> {
        if mass.len() != grid.n_steps() {
            return Err(OccupationError::Shape(format!(
                "{} cells for a grid of {} steps",
                mass.len(),
                grid.n_steps()
            )));
        }
        for (k, cell) in mass.iter().enumerate() {
            if cell.len() != model.n_states()
                || cell
                    .iter()
                    .enumerate()
                    .any(|(i, r)| r.len() != model.n_actions(i))
            {
                return Err(OccupationError::Shape(format!(
                    "cell {k} does not match the action sets"
                )));
            }
            if cell.iter().flatten().any(|&v| !(v >= -NORMALIZATION_TOL)) {
                return Err(OccupationError::Shape(format!("negative mass in cell {k}")));
            }
            let total: f64 = cell.iter().flatten().sum();
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(OccupationError::Shape(format!(
                    "cell {k} has total mass {total}"
                )));
            }
        }
        Ok(Self { grid, mass })
    }

    pub(crate) fn from_parts_unchecked(grid: TimeGrid, mass: Vec<Vec<Vec<f64>>>) -> Self {
        Self { grid, mass }
    }

    /// Equal mass on every `(i, a)` pair, ignoring the dynamics.
    pub fn uniform(model: &CtmdpModel, grid: TimeGrid) -> Self {
        let share = 1.0 / model.n_pairs() as f64;
        let cell: Vec<Vec<f64>> = (0..model.n_states())
            .map(|i| vec![share; model.n_actions(i)])
            .collect();
        Self {
            grid,
            mass: vec![cell; grid.n_steps()],
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn mass(&self, cell: usize, state: usize, action: usize) -> f64 {
        self.mass[cell][state][action]
    }

    pub fn cells(&self) -> &[Vec<Vec<f64>>] {
        &self.mass
    }

    /// `sum_a y(k, i, a)`.
    pub fn state_mass(&self, cell: usize, state: usize) -> f64 {
        self.mass[cell][state].iter().sum()
    }

    /// `sum_k dt sum_{i,a} c_n(i,a) y(k,i,a)`.
    pub fn expected_cost(&self, model: &CtmdpModel, cost_index: usize) -> f64 {
        self.expected_with(|i, a| model.cost(cost_index, i, a))
    }

    pub(crate) fn expected_with(&self, f: impl Fn(usize, usize) -> f64) -> f64 {
        let dt = self.grid.dt();
        self.mass
            .iter()
            .map(|cell| {
                cell.iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.iter()
                            .enumerate()
                            .map(|(a, &y)| y * f(i, a))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    * dt
            })
            .sum()
    }

    /// `theta * self + (1 - theta) * other`.
    pub fn mix(&self, other: &Self, theta: f64) -> Self {
        let mass = self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(ra, rb)| {
                        ra.iter()
                            .zip(rb)
                            .map(|(x, y)| theta * x + (1.0 - theta) * y)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            grid: self.grid,
            mass,
        }
    }

    /// `phi(a | i, t_k) = y(k,i,a) / sum_a y(k,i,a)`, uniform where the state
    /// mass is at most [`ZERO_MASS`]. The last node repeats the last cell.
    pub fn disintegrate(&self, model: &CtmdpModel) -> MarkovPolicy {
        let mut probs: Vec<Vec<Vec<f64>>> = self
            .mass
            .iter()
            .map(|cell| {
                cell.iter()
                    .map(|row| {
                        let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
                        if total > ZERO_MASS {
                            row.iter().map(|v| v.max(0.0) / total).collect()
                        } else {
                            vec![1.0 / row.len() as f64; row.len()]
                        }
                    })
                    .collect()
            })
            .collect();
        debug_assert_eq!(probs.first().map(|c| c.len()), Some(model.n_states()));
        let last = probs.last().cloned().unwrap_or_default();
        probs.push(last);
        MarkovPolicy::from_parts_unchecked(self.grid, PolicyKind::Randomized(probs))
    }

    /// `k,t,state,action,a1,...,mass`, zero entries skipped.
    pub fn write_csv<W: Write>(&self, model: &CtmdpModel, mut out: W) -> io::Result<()> {
        let dims = (0..model.n_states())
            .flat_map(|i| (0..model.n_actions(i)).map(move |a| (i, a)))
            .map(|(i, a)| model.action_point(i, a).len())
            .max()
            .unwrap_or(0);
        let comps: String = (0..dims).map(|d| format!(",a{}", d + 1)).collect();
        writeln!(out, "k,t,state,action{comps},mass")?;
        for (k, cell) in self.mass.iter().enumerate() {
            let t = self.grid.node(k);
            for (i, row) in cell.iter().enumerate() {
                for (a, &y) in row.iter().enumerate() {
                    if y == 0.0 {
                        continue;
                    }
                    write!(out, "{k},{t},{i},{a}")?;
                    for x in model.action_point(i, a) {
                        write!(out, ",{x}")?;
                    }
                    writeln!(out, ",{y}")?;
                }
            }
        }
        Ok(())
    }
}

/// Forward equation `p' = p Q_phi` from `gamma` by RK4, with the node-`k`
/// law of `policy` held on cell `k`; `y(k,i,a) = p(i, t_k) phi(a | i, t_k)`.
pub fn occupation_of_policy(
    model: &CtmdpModel,
    grid: TimeGrid,
    policy: &MarkovPolicy,
) -> Result<OccupationGrid, OccupationError> {
    grid.check_for(model)?;
    if policy.grid() != grid {
        return Err(PolicyError::Nodes {
            found: policy.grid().n_nodes(),
            expected: grid.n_nodes(),
        }
        .into());
    }
    policy.check(model)?;
    let n = model.n_states();
    let dt = grid.dt();
    let field = |k: usize, p: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (a, w) in policy.mix(k, i).iter() {
                let row = model.rate_row(i, a);
                let m = pi * w;
                out[i] += m * row.diag;
                for &(j, q) in &row.off {
                    out[j] += m * q;
                }
            }
        }
    };

    let mut p = model.initial_dist().to_vec();
    let mut mass = Vec::with_capacity(grid.n_steps());
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    for k in 0..grid.n_steps() {
        let cell: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = vec![0.0; model.n_actions(i)];
                for (a, w) in policy.mix(k, i).iter() {
                    row[a] = p[i] * w;
                }
                row
            })
            .collect();
        mass.push(cell);

        field(k, &p, &mut k1);
        for j in 0..n {
            tmp[j] = p[j] + 0.5 * dt * k1[j];
        }
        field(k, &tmp, &mut k2);
        for j in 0..n {
            tmp[j] = p[j] + 0.5 * dt * k2[j];
        }
        field(k, &tmp, &mut k3);
        for j in 0..n {
            tmp[j] = p[j] + dt * k3[j];
        }
        field(k, &tmp, &mut k4);
        for j in 0..n {
            p[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if let Some(state) = p.iter().position(|v| !v.is_finite()) {
            return Err(DpError::NonFinite { state, node: k + 1 }.into());
        }
    }
    Ok(OccupationGrid { grid, mass })
}

/// A test function tabulated on the grid nodes, `values[k][i] = g(i, t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub name: String,
    pub values: Vec<Vec<f64>>,
}

impl TestFunction {
    pub fn from_fn(
        name: impl Into<String>,
        grid: TimeGrid,
        n_states: usize,
        f: impl Fn(usize, f64) -> f64,
    ) -> Self {
        let values = (0..grid.n_nodes())
            .map(|k| {
                let t = grid.node(k);
                (0..n_states).map(|i| f(i, t)).collect()
            })
            .collect();
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn constant(grid: TimeGrid, n_states: usize, c: f64) -> Self {
        Self::from_fn(format!("const_{c}"), grid, n_states, |_, _| c)
    }

    /// `w^power`.
    pub fn weight_power(model: &CtmdpModel, grid: TimeGrid, power: i32) -> Self {
        let name = if power == 1 {
            "w".to_string()
        } else {
            format!("w{power}")
        };
        Self::from_fn(name, grid, model.n_states(), |i, _| {
            model.weight(i).powi(power)
        })
    }

    /// `1{i = state, from <= t < to}`.
    pub fn indicator(grid: TimeGrid, n_states: usize, state: usize, from: f64, to: f64) -> Self {
        Self::from_fn(
            format!("ind_{state}_{from}_{to}"),
            grid,
            n_states,
            |i, t| {
                if i == state && t >= from && t < to {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }
}

/// Indicators of every state on `blocks` equal time intervals, then `w` and `w^2`.
pub fn default_test_family(model: &CtmdpModel, grid: TimeGrid, blocks: usize) -> Vec<TestFunction> {
    let t = grid.horizon();
    let blocks = blocks.max(1);
    let mut family = Vec::with_capacity(model.n_states() * blocks + 2);
    for i in 0..model.n_states() {
        for b in 0..blocks {
            let from = t * b as f64 / blocks as f64;
            let to = if b + 1 == blocks {
                f64::INFINITY
            } else {
                t * (b + 1) as f64 / blocks as f64
            };
            family.push(TestFunction::indicator(grid, model.n_states(), i, from, to));
        }
    }
    family.push(TestFunction::weight_power(model, grid, 1));
    family.push(TestFunction::weight_power(model, grid, 2));
    family
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterizationReport {
    /// `(name, lhs - rhs)` per test function.
    pub residuals: Vec<(String, f64)>,
    pub max_residual: f64,
}

impl CharacterizationReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.residuals
            .iter()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    }
}

/// Residual of the characterization identity for each test function.
pub fn check_characterization(
    model: &CtmdpModel,
    eta: &OccupationGrid,
    tests: &[TestFunction],
) -> Result<CharacterizationReport, OccupationError> {
    let grid = eta.grid();
    let n = model.n_states();
    let steps = grid.n_steps();
    let dt = grid.dt();
    let gamma = model.initial_dist();
    let mut residuals = Vec::with_capacity(tests.len());
    for g in tests {
        if g.values.len() != grid.n_nodes() || g.values.iter().any(|r| r.len() != n) {
            return Err(OccupationError::Shape(format!(
                "test function {} has the wrong shape",
                g.name
            )));
        }
        // tail[k][j] = int_{t_k}^T g(j, v) dv by the trapezoid rule
        let mut tail = vec![vec![0.0; n]; steps + 1];
        for k in (0..steps).rev() {
            let h = grid.node(k + 1) - grid.node(k);
            for j in 0..n {
                tail[k][j] = tail[k + 1][j] + 0.5 * h * (g.values[k][j] + g.values[k + 1][j]);
            }
        }
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for k in 0..steps {
            let big_g = &tail[k];
            let mut l = 0.0;
            let mut r = 0.0;
            for i in 0..n {
                let row = &eta.mass[k][i];
                let mut state_mass = 0.0;
                for (a, &y) in row.iter().enumerate() {
                    state_mass += y;
                    if y == 0.0 {
                        continue;
                    }
                    // diag = -sum(off): constants in G cancel exactly
                    let flow: f64 = model
                        .rate_row(i, a)
                        .off
                        .iter()
                        .map(|&(j, q)| (big_g[j] - big_g[i]) * q)
                        .sum();
                    l += y * flow;
                }
                r += g.values[k][i] * (state_mass - gamma[i]);
            }
            lhs += dt * l;
            rhs += dt * r;
        }
        residuals.push((g.name.clone(), lhs - rhs));
    }
    let max_residual = residuals.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
    Ok(CharacterizationReport {
        residuals,
        max_residual,
    })
}
