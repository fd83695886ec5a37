//! Backward solution of the finite-horizon optimality equation.
//!
//! The value function `g(i, t)` satisfies `g(., T) = 0` and
//!
//! ```text
//! -dg/dt (j, t) = min_a { c(j, a) + sum_k g(k, t) q(k | j, a) }
//! ```
//!
//! which is integrated backward from `T` with classic RK4, re-evaluating the
//! minimum at every stage. The minimizing action at each node is kept as a
//! deterministic Markov policy. A fixed Markov policy is evaluated by the same
//! integrator with the minimum replaced by the policy's action law.

use std::io::{self, Write};

use thiserror::Error;

use crate::model::{
    drift::expm1_over, CtmdpModel, DriftConstants, MarkovPolicy, PolicyError, PolicyKind,
};

/// `dt * max_i q*(i)` may not exceed this.
pub const STABILITY_CAP: f64 = 0.5;
/// Relative slack allowed on the value envelope.
pub const ENVELOPE_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error(
        "grid needs n_steps >= 1 and a positive horizon (got n_steps = {n_steps}, T = {horizon})"
    )]
    Grid { horizon: f64, n_steps: usize },
    #[error("grid horizon {grid} differs from model horizon {model}")]
    Horizon { grid: f64, model: f64 },
    #[error(
        "step dt = {dt} with max exit rate {max_rate} breaks the stability cap; use n_steps >= {required_steps}"
    )]
    Stability {
        dt: f64,
        max_rate: f64,
        required_steps: usize,
    },
    #[error("non-finite value at state {state}, node {node}")]
    NonFinite { state: usize, node: usize },
    #[error("cost weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Uniform grid `t_k = k T / n_steps` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, DpError> {
        if n_steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(DpError::Grid { horizon, n_steps });
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid over the model's horizon.
    pub fn for_model(model: &CtmdpModel, n_steps: usize) -> Result<Self, DpError> {
        Self::new(model.horizon(), n_steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Index of the cell `[t_k, t_{k+1})` containing `t`, clamped to `0..n_steps`.
    pub fn cell_of(&self, t: f64) -> usize {
        if !(t > 0.0) {
            return 0;
        }
        let dt = self.dt();
        let mut k = (t / dt).floor() as usize;
        if ((k + 1) as f64) * dt <= t {
            k += 1;
        }
        k.min(self.n_steps - 1)
    }

    /// Smallest step count meeting the stability cap for `model`.
    pub fn required_steps(model: &CtmdpModel, horizon: f64) -> usize {
        let q = model.max_q_star();
        ((horizon * q / STABILITY_CAP).ceil() as usize).max(1)
    }

    pub fn check_stability(&self, model: &CtmdpModel) -> Result<(), DpError> {
        let max_rate = model.max_q_star();
        if self.dt() * max_rate > STABILITY_CAP {
            return Err(DpError::Stability {
                dt: self.dt(),
                max_rate,
                required_steps: Self::required_steps(model, self.horizon),
            });
        }
        Ok(())
    }

    pub(crate) fn check_for(&self, model: &CtmdpModel) -> Result<(), DpError> {
        if (self.horizon - model.horizon()).abs() > 1e-12 * model.horizon() {
            return Err(DpError::Horizon {
                grid: self.horizon,
                model: model.horizon(),
            });
        }
        self.check_stability(model)
    }
}

/// `g(i, t_k)` indexed `[k][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
}

impl ValueGrid {
    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn value(&self, state: usize, node: usize) -> f64 {
        self.values[node][state]
    }

    /// `g(., t_k)`.
    pub fn at_node(&self, node: usize) -> &[f64] {
        &self.values[node]
    }

    /// `g(., 0)`.
    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }

    /// `sum_i gamma(i) g(i, 0)`.
    pub fn expected_initial(&self, model: &CtmdpModel) -> f64 {
        model.initial_expectation(|i| self.values[0][i])
    }

    /// Largest `|g - other|` over all nodes.
    pub fn max_abs_diff(&self, other: &ValueGrid) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows `state,t,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "state,t,value")?;
        for i in 0..self.values[0].len() {
            for (k, row) in self.values.iter().enumerate() {
                writeln!(out, "{i},{},{}", self.grid.node(k), row[i])?;
            }
        }
        Ok(())
    }
}

/// Rows `state,t,action,<components>`; randomized policies add a `prob` column
/// and one row per supported action.
pub fn write_policy_csv<W: Write>(
    model: &CtmdpModel,
    policy: &MarkovPolicy,
    mut out: W,
) -> io::Result<()> {
    let dims = (0..model.n_states())
        .flat_map(|i| (0..model.n_actions(i)).map(move |a| (i, a)))
        .map(|(i, a)| model.action_point(i, a).len())
        .max()
        .unwrap_or(0);
    let comps: String = (0..dims).map(|d| format!(",a{}", d + 1)).collect();
    let grid = policy.grid();
    match policy.kind() {
        PolicyKind::Deterministic(f) => {
            writeln!(out, "state,t,action{comps}")?;
            for i in 0..model.n_states() {
                for (k, row) in f.iter().enumerate() {
                    write!(out, "{i},{},{}", grid.node(k), row[i])?;
                    for x in model.action_point(i, row[i]) {
                        write!(out, ",{x}")?;
                    }
                    writeln!(out)?;
                }
            }
        }
        PolicyKind::Randomized(p) => {
            writeln!(out, "state,t,action,prob{comps}")?;
            for i in 0..model.n_states() {
                for (k, row) in p.iter().enumerate() {
                    for (a, &w) in row[i].iter().enumerate() {
                        if w <= 0.0 {
                            continue;
                        }
                        write!(out, "{i},{},{a},{w}", grid.node(k))?;
                        for x in model.action_point(i, a) {
                            write!(out, ",{x}")?;
                        }
                        writeln!(out)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `min_a { c(i,a) + (Q_a g)(i) }` for every state, with lowest-index argmin.
pub(crate) fn hamiltonian(
    model: &CtmdpModel,
    costs: &[Vec<f64>],
    g: &[f64],
    out: &mut [f64],
    argmin: Option<&mut [usize]>,
) {
    let mut arg = argmin;
    for i in 0..model.n_states() {
        let mut best = f64::INFINITY;
        let mut best_a = 0;
        for a in 0..model.n_actions(i) {
            let v = costs[i][a] + model.rate_row(i, a).apply(i, g);
            if v < best {
                best = v;
                best_a = a;
            }
        }
        out[i] = best;
        if let Some(arg) = arg.as_deref_mut() {
            arg[i] = best_a;
        }
    }
}

fn policy_generator(
    model: &CtmdpModel,
    costs: &[Vec<f64>],
    policy: &MarkovPolicy,
    node: usize,
    g: &[f64],
    out: &mut [f64],
) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = policy
            .mix(node, i)
            .expect(|a| costs[i][a] + model.rate_row(i, a).apply(i, g));
    }
}

fn check_weights(model: &CtmdpModel, weights: &[f64]) -> Result<(), DpError> {
    if weights.len() != model.n_costs() {
        return Err(DpError::Weights(format!(
            "{} weights for {} cost tables",
            weights.len(),
            model.n_costs()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(DpError::Weights(format!(
            "weights must be finite and >= 0, got {w}"
        )));
    }
    Ok(())
}

/// One backward RK4 step `g_next -> g` of the autonomous field `field`.
struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// Assumes `k1` already holds `field(from)`.
    fn finish(
        &mut self,
        from: &[f64],
        dt: f64,
        mut field: impl FnMut(&[f64], &mut [f64]),
        to: &mut [f64],
    ) {
        let n = from.len();
        for j in 0..n {
            self.tmp[j] = from[j] + 0.5 * dt * self.k1[j];
        }
        field(&self.tmp, &mut self.k2);
        for j in 0..n {
            self.tmp[j] = from[j] + 0.5 * dt * self.k2[j];
        }
        field(&self.tmp, &mut self.k3);
        for j in 0..n {
            self.tmp[j] = from[j] + dt * self.k3[j];
        }
        field(&self.tmp, &mut self.k4);
        for j in 0..n {
            to[j] = from[j]
                + dt / 6.0 * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
        }
    }
}

fn check_finite(values: &[f64], node: usize) -> Result<(), DpError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(state) => Err(DpError::NonFinite { state, node }),
        None => Ok(()),
    }
}

/// Solves the optimality equation for the cost `sum_n weights[n] c_n`.
///
/// Returns the value on every node and the node-wise minimizing actions.
pub fn solve_backward(
    model: &CtmdpModel,
    grid: TimeGrid,
    weights: &[f64],
) -> Result<(ValueGrid, MarkovPolicy), DpError> {
    check_weights(model, weights)?;
    let costs = model.scalarized_costs(weights);
    solve_with_costs(model, grid, &costs)
}

pub(crate) fn solve_with_costs(
    model: &CtmdpModel,
    grid: TimeGrid,
    costs: &[Vec<f64>],
) -> Result<(ValueGrid, MarkovPolicy), DpError> {
    grid.check_for(model)?;
    let n = model.n_states();
    let steps = grid.n_steps();
    let dt = grid.dt();

    let mut values = vec![vec![0.0; n]; steps + 1];
    let mut actions = vec![vec![0usize; n]; steps + 1];
    let mut rk = Rk4::new(n);

    for k in (0..steps).rev() {
        let (head, tail) = values.split_at_mut(k + 1);
        let from = &tail[0];
        let to = &mut head[k];
        hamiltonian(model, costs, from, &mut rk.k1, Some(&mut actions[k + 1]));
        rk.finish(
            from,
            dt,
            |g, out| hamiltonian(model, costs, g, out, None),
            to,
        );
        check_finite(to, k)?;
    }
    let mut scratch = vec![0.0; n];
    hamiltonian(
        model,
        costs,
        &values[0],
        &mut scratch,
        Some(&mut actions[0]),
    );

    let policy = MarkovPolicy::from_parts_unchecked(grid, PolicyKind::Deterministic(actions));
    Ok((ValueGrid { grid, values }, policy))
}

/// Value of a fixed Markov policy for cost table `cost_index`.
pub fn evaluate_policy(
    model: &CtmdpModel,
    grid: TimeGrid,
    policy: &MarkovPolicy,
    cost_index: usize,
) -> Result<ValueGrid, DpError> {
    let mut weights = vec![0.0; model.n_costs()];
    if cost_index >= weights.len() {
        return Err(DpError::Weights(format!(
            "cost index {cost_index} out of range for {} tables",
            weights.len()
        )));
    }
    weights[cost_index] = 1.0;
    evaluate_policy_weighted(model, grid, policy, &weights)
}

pub fn evaluate_policy_weighted(
    model: &CtmdpModel,
    grid: TimeGrid,
    policy: &MarkovPolicy,
    weights: &[f64],
) -> Result<ValueGrid, DpError> {
    check_weights(model, weights)?;
    grid.check_for(model)?;
    if policy.grid() != grid {
        return Err(DpError::Policy(PolicyError::Nodes {
            found: policy.grid().n_nodes(),
            expected: grid.n_nodes(),
        }));
    }
    policy.check(model)?;
    let costs = model.scalarized_costs(weights);
    let n = model.n_states();
    let steps = grid.n_steps();
    let dt = grid.dt();

    let mut values = vec![vec![0.0; n]; steps + 1];
    let mut rk = Rk4::new(n);
    for k in (0..steps).rev() {
        let (head, tail) = values.split_at_mut(k + 1);
        let from = &tail[0];
        let to = &mut head[k];
        // The law at node k governs the whole cell [t_k, t_{k+1}).
        policy_generator(model, &costs, policy, k, from, &mut rk.k1);
        rk.finish(
            from,
            dt,
            |g, out| policy_generator(model, &costs, policy, k, g, out),
            to,
        );
        check_finite(to, k)?;
    }
    Ok(ValueGrid { grid, values })
}

/// `M T [e^{rho1 T} w(i) + (b1/rho1)(e^{rho1 T} - 1)]`, scaled by `cost_scale`
/// (the sum of scalarization weights).
pub fn value_envelope(
    model: &CtmdpModel,
    constants: &DriftConstants,
    state: usize,
    cost_scale: f64,
) -> f64 {
    let t = model.horizon();
    cost_scale * constants.cost_bound * t * constants.weight_moment_bound(model.weight(state), t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    /// Largest `|g(i,t_k)| / bound(i)` seen.
    pub worst_ratio: f64,
    /// `(state, node, value, bound)` beyond the relative slack.
    pub violations: Vec<(usize, usize, f64, f64)>,
}

impl EnvelopeReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every node of `values` against [`value_envelope`].
pub fn check_envelope(
    model: &CtmdpModel,
    constants: &DriftConstants,
    values: &ValueGrid,
    cost_scale: f64,
) -> EnvelopeReport {
    check_envelope_with(model, constants, values, cost_scale, ENVELOPE_SLACK)
}

/// As [`check_envelope`] with relative slack `slack`.
pub fn check_envelope_with(
    model: &CtmdpModel,
    constants: &DriftConstants,
    values: &ValueGrid,
    cost_scale: f64,
    slack: f64,
) -> EnvelopeReport {
    let mut worst_ratio = 0.0_f64;
    let mut violations = Vec::new();
    for i in 0..model.n_states() {
        let bound = value_envelope(model, constants, i, cost_scale);
        for (k, row) in values.values.iter().enumerate() {
            let v = row[i].abs();
            if bound > 0.0 {
                worst_ratio = worst_ratio.max(v / bound);
            } else if v > 0.0 {
                worst_ratio = f64::INFINITY;
            }
            if v > bound * (1.0 + slack) + f64::MIN_POSITIVE {
                violations.push((i, k, row[i], bound));
            }
        }
    }
    EnvelopeReport {
        worst_ratio,
        violations,
    }
}

/// Markov-inequality estimate of the value mass beyond the truncation level:
/// `M T (e^{rho1 T} gamma(w) + (b1/rho1)(e^{rho1 T} - 1)) / m`.
pub fn truncation_error_bound(model: &CtmdpModel, constants: &DriftConstants) -> f64 {
    let t = model.horizon();
    let gamma_w = model.initial_expectation(|i| model.weight(i));
    let moment =
        (constants.rho1 * t).exp() * gamma_w + constants.b1 * expm1_over(constants.rho1, t);
    constants.cost_bound * t * moment / model.truncation_level()
}
