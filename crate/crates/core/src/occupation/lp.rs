//! The constrained problem as a linear program over occupation grids.
//!
//! Variables are `y(k,i,a)` for cells `k = 0..K` followed by one slack per
//! constraint. Rows, in order:
//!
//! * `sum_a y(0,i,a) = gamma(i)` for every state,
//! * `sum_a y(k+1,j,a) - sum_{i,a} (delta_ij + dt q(j|i,a)) y(k,i,a) = 0`
//!   for `k = 0..K-1` and every state `j`,
//! * `dt sum_{k,i,a} c_n(i,a) y(k,i,a) + x_n = d_n` for `n = 1..N`.
//!
//! The objective is `dt sum c_0 y`. The feasible cells are exactly the
//! explicit-Euler occupations of randomized Markov policies, and its vertices
//! are those of deterministic ones. [`solve_constrained`] therefore runs column
//! generation over deterministic policies, pricing each candidate with the
//! exact discrete dynamic program, and never materializes the matrix.

use crate::dp::{hamiltonian, TimeGrid};
use crate::lp::{solve_lp, LpProblem, LpResiduals, LpSolution, LpStatus};
use crate::model::{CtmdpModel, MarkovPolicy, PolicyError};

use super::{OccupationError, OccupationGrid};

/// `variables * rows` above this is refused by the dense builder.
pub const MAX_DENSE_CELLS: usize = 40_000_000;

/// Index map of [`build_constrained_lp`].
#[derive(Debug, Clone, PartialEq)]
pub struct LpLayout {
    pub n_cells: usize,
    pub n_states: usize,
    pub n_pairs: usize,
    pub n_constraints: usize,
    offsets: Vec<usize>,
}

impl LpLayout {
    pub fn new(model: &CtmdpModel, grid: TimeGrid) -> Self {
        let mut offsets = Vec::with_capacity(model.n_states());
        let mut acc = 0;
        for i in 0..model.n_states() {
            offsets.push(acc);
            acc += model.n_actions(i);
        }
        Self {
            n_cells: grid.n_steps(),
            n_states: model.n_states(),
            n_pairs: acc,
            n_constraints: model.n_constraints(),
            offsets,
        }
    }

    pub fn var(&self, cell: usize, state: usize, action: usize) -> usize {
        cell * self.n_pairs + self.offsets[state] + action
    }

    pub fn slack(&self, n: usize) -> usize {
        self.n_cells * self.n_pairs + n
    }

    pub fn n_vars(&self) -> usize {
        self.n_cells * self.n_pairs + self.n_constraints
    }

    /// Row of `gamma(state)` for `cell = 0`, otherwise the flow row into `cell`.
    pub fn balance_row(&self, cell: usize, state: usize) -> usize {
        cell * self.n_states + state
    }

    pub fn constraint_row(&self, n: usize) -> usize {
        self.n_cells * self.n_states + n
    }

    pub fn n_rows(&self) -> usize {
        self.n_cells * self.n_states + self.n_constraints
    }
}

fn require_constraints(model: &CtmdpModel) -> Result<(), OccupationError> {
    if model.n_constraints() == 0 {
        return Err(OccupationError::NoConstraints);
    }
    Ok(())
}

/// Dense assembly, refused beyond [`MAX_DENSE_CELLS`].
pub fn build_constrained_lp(
    model: &CtmdpModel,
    grid: TimeGrid,
) -> Result<LpProblem, OccupationError> {
    require_constraints(model)?;
    grid.check_for(model)?;
    let layout = LpLayout::new(model, grid);
    let (vars, rows) = (layout.n_vars(), layout.n_rows());
    if vars.saturating_mul(rows) > MAX_DENSE_CELLS {
        return Err(OccupationError::TooLarge { vars, rows });
    }
    let dt = grid.dt();
    let n = model.n_states();
    let mut objective = vec![0.0; vars];
    let mut matrix = vec![vec![0.0; vars]; rows];
    let mut rhs = vec![0.0; rows];
    for k in 0..layout.n_cells {
        for i in 0..n {
            for a in 0..model.n_actions(i) {
                let v = layout.var(k, i, a);
                objective[v] = dt * model.cost(0, i, a);
                matrix[layout.balance_row(k, i)][v] += 1.0;
                if k + 1 < layout.n_cells {
                    let row = model.rate_row(i, a);
                    matrix[layout.balance_row(k + 1, i)][v] -= 1.0 + dt * row.diag;
                    for &(j, q) in &row.off {
                        matrix[layout.balance_row(k + 1, j)][v] -= dt * q;
                    }
                }
                for c in 0..layout.n_constraints {
                    matrix[layout.constraint_row(c)][v] = dt * model.cost(c + 1, i, a);
                }
            }
        }
    }
    rhs[..n].copy_from_slice(model.initial_dist());
    for c in 0..layout.n_constraints {
        matrix[layout.constraint_row(c)][layout.slack(c)] = 1.0;
        rhs[layout.constraint_row(c)] = model.constraint_bounds()[c];
    }
    Ok(LpProblem {
        objective,
        eq_matrix: matrix,
        eq_rhs: rhs,
        ub_matrix: vec![],
        ub_rhs: vec![],
    })
}

/// Optimality residuals of a full primal-dual pair in the layout of
/// [`build_constrained_lp`], computed from the model without the matrix.
pub fn structural_residuals(
    model: &CtmdpModel,
    grid: TimeGrid,
    x: &[f64],
    duals: &[f64],
) -> LpResiduals {
    let layout = LpLayout::new(model, grid);
    let dt = grid.dt();
    let n = model.n_states();
    let n_c = layout.n_constraints;
    let mut res = LpResiduals::default();
    let mut balance = vec![0.0; layout.n_cells * n];
    let mut cons = vec![0.0; n_c];
    let mut primal_obj = 0.0;
    for k in 0..layout.n_cells {
        for i in 0..n {
            for a in 0..model.n_actions(i) {
                let y = x[layout.var(k, i, a)];
                res.primal = res.primal.max((-y).max(0.0));
                primal_obj += dt * model.cost(0, i, a) * y;
                balance[layout.balance_row(k, i)] += y;
                let row = model.rate_row(i, a);
                let mut reduced = dt * model.cost(0, i, a) - duals[layout.balance_row(k, i)];
                if k + 1 < layout.n_cells {
                    balance[layout.balance_row(k + 1, i)] -= (1.0 + dt * row.diag) * y;
                    for &(j, q) in &row.off {
                        balance[layout.balance_row(k + 1, j)] -= dt * q * y;
                    }
                    let next = |j: usize| duals[layout.balance_row(k + 1, j)];
                    reduced += (1.0 + dt * row.diag) * next(i);
                    reduced += row.off.iter().map(|&(j, q)| dt * q * next(j)).sum::<f64>();
                }
                for c in 0..n_c {
                    let cc = dt * model.cost(c + 1, i, a);
                    cons[c] += cc * y;
                    reduced -= cc * duals[layout.constraint_row(c)];
                }
                res.dual = res.dual.max((-reduced).max(0.0));
                res.complementarity = res.complementarity.max((y * reduced).abs());
            }
        }
    }
    let mut dual_obj = 0.0;
    for (i, &g) in model.initial_dist().iter().enumerate() {
        res.primal = res.primal.max((balance[i] - g).abs());
        dual_obj += g * duals[i];
    }
    for v in &balance[n..] {
        res.primal = res.primal.max(v.abs());
    }
    for c in 0..n_c {
        let slack = x[layout.slack(c)];
        let d = model.constraint_bounds()[c];
        let y = duals[layout.constraint_row(c)];
        res.primal = res
            .primal
            .max((cons[c] + slack - d).abs())
            .max((-slack).max(0.0));
        res.dual = res.dual.max(y.max(0.0));
        res.complementarity = res.complementarity.max((slack * y).abs());
        dual_obj += d * y;
    }
    res.gap = (primal_obj - dual_obj).abs();
    res
}

/// Discrete dynamic program matching the LP rows:
/// `V_K = 0`, `V_k = V_{k+1} + dt min_a {c(i,a) + (Q_a V_{k+1})(i)}`.
pub(crate) fn euler_values(
    model: &CtmdpModel,
    grid: TimeGrid,
    costs: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let n = model.n_states();
    let steps = grid.n_steps();
    let dt = grid.dt();
    let mut values = vec![vec![0.0; n]; steps + 1];
    let mut actions = vec![vec![0usize; n]; steps];
    let mut h = vec![0.0; n];
    for k in (0..steps).rev() {
        hamiltonian(model, costs, &values[k + 1], &mut h, Some(&mut actions[k]));
        for i in 0..n {
            values[k][i] = values[k + 1][i] + dt * h[i];
        }
    }
    (values, actions)
}

/// Explicit-Euler occupation `p_{k+1} = p_k (I + dt Q_phi)` of a Markov
/// policy; the exact feasible point of the LP that the policy induces.
pub fn euler_occupation(
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
    let mut p = model.initial_dist().to_vec();
    let mut next = vec![0.0; n];
    let mut mass = Vec::with_capacity(grid.n_steps());
    for k in 0..grid.n_steps() {
        next.copy_from_slice(&p);
        let mut cell = Vec::with_capacity(n);
        for (i, &pi) in p.iter().enumerate() {
            let mut row = vec![0.0; model.n_actions(i)];
            for (a, w) in policy.mix(k, i).iter() {
                let y = pi * w;
                row[a] = y;
                let r = model.rate_row(i, a);
                next[i] += dt * y * r.diag;
                for &(j, q) in &r.off {
                    next[j] += dt * y * q;
                }
            }
            cell.push(row);
        }
        mass.push(cell);
        std::mem::swap(&mut p, &mut next);
    }
    Ok(OccupationGrid::from_parts_unchecked(grid, mass))
}

/// A deterministic policy and its `N + 1` discrete expected costs.
struct Column {
    actions: Vec<Vec<usize>>,
    costs: Vec<f64>,
}

fn deterministic_occupation(
    model: &CtmdpModel,
    grid: TimeGrid,
    actions: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let n = model.n_states();
    let dt = grid.dt();
    let mut p = model.initial_dist().to_vec();
    let mut out = Vec::with_capacity(actions.len());
    for f in actions {
        out.push(p.clone());
        let mut next = p.clone();
        for i in 0..n {
            let r = model.rate_row(i, f[i]);
            next[i] += dt * p[i] * r.diag;
            for &(j, q) in &r.off {
                next[j] += dt * p[i] * q;
            }
        }
        p = next;
    }
    out
}

fn make_column(model: &CtmdpModel, grid: TimeGrid, actions: Vec<Vec<usize>>) -> Column {
    let dt = grid.dt();
    let probs = deterministic_occupation(model, grid, &actions);
    let costs = (0..model.n_costs())
        .map(|c| {
            probs
                .iter()
                .zip(&actions)
                .map(|(p, f)| {
                    dt * p
                        .iter()
                        .enumerate()
                        .map(|(i, pi)| pi * model.cost(c, i, f[i]))
                        .sum::<f64>()
                })
                .sum()
        })
        .collect();
    Column { actions, costs }
}

/// Column generation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnGeneration {
    pub max_iterations: usize,
    /// A column enters when its reduced cost is below `-tol (1 + |value|)`.
    pub tol: f64,
}

impl Default for ColumnGeneration {
    fn default() -> Self {
        Self {
            max_iterations: 5_000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMethod {
    ColumnGeneration { iterations: usize, columns: usize },
    Dense,
}

#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    /// Full primal `(y, x)` and dual vectors in the layout of [`build_constrained_lp`].
    pub lp: LpSolution,
    pub occupation: OccupationGrid,
    pub policy: MarkovPolicy,
    /// `u_n >= 0`, the negated constraint-row duals.
    pub multipliers: Vec<f64>,
    /// `dt sum c_n y` for `n = 0..=N`.
    pub costs: Vec<f64>,
    pub method: SolveMethod,
}

fn master_problem(columns: &[Column], bounds: &[f64], phase_one: bool) -> LpProblem {
    let f = columns.len();
    let n_c = bounds.len();
    let extra = if phase_one { n_c } else { 0 };
    let width = f + n_c + extra;
    let objective: Vec<f64> = if phase_one {
        (0..width)
            .map(|j| if j >= f + n_c { 1.0 } else { 0.0 })
            .collect()
    } else {
        (0..width)
            .map(|j| if j < f { columns[j].costs[0] } else { 0.0 })
            .collect()
    };
    let mut p = LpProblem::new(objective);
    let mut convex = vec![0.0; width];
    convex[..f].iter_mut().for_each(|v| *v = 1.0);
    p.add_eq(convex, 1.0);
    for (c, &d) in bounds.iter().enumerate() {
        let mut row = vec![0.0; width];
        for (j, col) in columns.iter().enumerate() {
            row[j] = col.costs[c + 1];
        }
        row[f + c] = 1.0;
        if phase_one {
            row[f + n_c + c] = -1.0;
        }
        p.add_eq(row, d);
    }
    p
}

fn weighted_costs(model: &CtmdpModel, weights: &[f64]) -> Vec<Vec<f64>> {
    model.scalarized_costs(weights)
}

fn initial_value(model: &CtmdpModel, values: &[Vec<f64>]) -> f64 {
    model
        .initial_dist()
        .iter()
        .zip(&values[0])
        .map(|(g, v)| g * v)
        .sum()
}

pub fn solve_constrained(
    model: &CtmdpModel,
    grid: TimeGrid,
) -> Result<ConstrainedSolution, OccupationError> {
    solve_constrained_with(model, grid, ColumnGeneration::default())
}

pub fn solve_constrained_with(
    model: &CtmdpModel,
    grid: TimeGrid,
    settings: ColumnGeneration,
) -> Result<ConstrainedSolution, OccupationError> {
    require_constraints(model)?;
    grid.check_for(model)?;
    let n_c = model.n_constraints();
    let bounds = model.constraint_bounds();
    let mut pivots = 0;
    let mut iterations = 0;

    let mut columns: Vec<Column> = Vec::new();
    let push = |columns: &mut Vec<Column>, actions: Vec<Vec<usize>>| -> bool {
        if columns.iter().any(|c| c.actions == actions) {
            return false;
        }
        columns.push(make_column(model, grid, actions));
        true
    };
    for c in 0..=n_c {
        let mut w = vec![0.0; n_c + 1];
        w[c] = 1.0;
        let (_, actions) = euler_values(model, grid, &weighted_costs(model, &w));
        push(&mut columns, actions);
    }

    // Phase one: drive the constraint excess to zero, if the seed columns
    // cannot meet the bounds on their own.
    let mut master = solve_lp(&master_problem(&columns, bounds, false))?;
    pivots += master.pivots;
    if master.status == LpStatus::Infeasible {
        loop {
            let sol = solve_lp(&master_problem(&columns, bounds, true))?;
            pivots += sol.pivots;
            if sol.status != LpStatus::Optimal {
                return Err(OccupationError::Status(sol.status));
            }
            if sol.objective <= 1e-10 {
                break;
            }
            let v = sol.duals[0];
            let mut w = vec![0.0; n_c + 1];
            for c in 0..n_c {
                w[c + 1] = (-sol.duals[c + 1]).max(0.0);
            }
            let (values, actions) = euler_values(model, grid, &weighted_costs(model, &w));
            let reduced = initial_value(model, &values) - v;
            iterations += 1;
            if reduced >= -settings.tol * (1.0 + v.abs()) || !push(&mut columns, actions) {
                return Err(OccupationError::Status(LpStatus::Infeasible));
            }
            if iterations >= settings.max_iterations {
                return Err(OccupationError::Status(LpStatus::PivotLimit));
            }
        }
        master = solve_lp(&master_problem(&columns, bounds, false))?;
        pivots += master.pivots;
    }

    let (final_values, multipliers) = loop {
        if master.status != LpStatus::Optimal {
            return Err(OccupationError::Status(master.status));
        }
        let v = master.duals[0];
        let u: Vec<f64> = (0..n_c).map(|c| (-master.duals[c + 1]).max(0.0)).collect();
        let mut w = vec![1.0];
        w.extend_from_slice(&u);
        let (values, actions) = euler_values(model, grid, &weighted_costs(model, &w));
        let reduced = initial_value(model, &values) - v;
        if reduced >= -settings.tol * (1.0 + v.abs()) || !push(&mut columns, actions) {
            break (values, u);
        }
        iterations += 1;
        if iterations >= settings.max_iterations {
            return Err(OccupationError::Status(LpStatus::PivotLimit));
        }
        master = solve_lp(&master_problem(&columns, bounds, false))?;
        pivots += master.pivots;
    };

    let layout = LpLayout::new(model, grid);
    let n = model.n_states();
    let mut x = vec![0.0; layout.n_vars()];
    for (lambda, col) in master.x.iter().zip(&columns) {
        if *lambda <= 0.0 {
            continue;
        }
        let probs = deterministic_occupation(model, grid, &col.actions);
        for (k, (p, f)) in probs.iter().zip(&col.actions).enumerate() {
            for i in 0..n {
                x[layout.var(k, i, f[i])] += lambda * p[i];
            }
        }
    }
    for c in 0..n_c {
        x[layout.slack(c)] = master.x[columns.len() + c];
    }
    let mut duals = vec![0.0; layout.n_rows()];
    for k in 0..layout.n_cells {
        for i in 0..n {
            duals[layout.balance_row(k, i)] = final_values[k][i];
        }
    }
    for c in 0..n_c {
        duals[layout.constraint_row(c)] = -multipliers[c];
    }
    let residuals = structural_residuals(model, grid, &x, &duals);
    let n_columns = columns.len();
    let lp = LpSolution {
        status: LpStatus::Optimal,
        objective: master.objective,
        x,
        duals,
        pivots,
        residuals,
    };
    finish(
        model,
        grid,
        lp,
        multipliers,
        SolveMethod::ColumnGeneration {
            iterations,
            columns: n_columns,
        },
    )
}

fn finish(
    model: &CtmdpModel,
    grid: TimeGrid,
    lp: LpSolution,
    multipliers: Vec<f64>,
    method: SolveMethod,
) -> Result<ConstrainedSolution, OccupationError> {
    let layout = LpLayout::new(model, grid);
    let mass: Vec<Vec<Vec<f64>>> = (0..layout.n_cells)
        .map(|k| {
            (0..model.n_states())
                .map(|i| {
                    (0..model.n_actions(i))
                        .map(|a| lp.x[layout.var(k, i, a)])
                        .collect()
                })
                .collect()
        })
        .collect();
    let occupation = OccupationGrid::from_parts_unchecked(grid, mass);
    let policy = occupation.disintegrate(model);
    let costs = (0..model.n_costs())
        .map(|c| occupation.expected_cost(model, c))
        .collect();
    Ok(ConstrainedSolution {
        lp,
        occupation,
        policy,
        multipliers,
        costs,
        method,
    })
}

/// Solves the assembled LP with the dense simplex; for small instances.
pub fn solve_constrained_dense(
    model: &CtmdpModel,
    grid: TimeGrid,
) -> Result<ConstrainedSolution, OccupationError> {
    let problem = build_constrained_lp(model, grid)?;
    let lp = solve_lp(&problem)?;
    if lp.status != LpStatus::Optimal {
        return Err(OccupationError::Status(lp.status));
    }
    let layout = LpLayout::new(model, grid);
    let multipliers = (0..layout.n_constraints)
        .map(|c| (-lp.duals[layout.constraint_row(c)]).max(0.0))
        .collect();
    finish(model, grid, lp, multipliers, SolveMethod::Dense)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::ModelParts;

    /// One state, no motion, `c0 = (1, 0)`, `c1 = (0, 2)`, `d1 = 1`.
    pub(crate) fn mixing_model() -> CtmdpModel {
        CtmdpModel::new(ModelParts {
            actions: vec![vec![vec![0.0], vec![1.0]]],
            rates: vec![vec![vec![0.0], vec![0.0]]],
            costs: vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 2.0]]],
            constraint_bounds: vec![1.0],
            horizon: 1.0,
            initial_dist: vec![1.0],
            weight: vec![1.0],
            truncation_level: None,
        })
        .unwrap()
    }

    #[test]
    fn layout_indices_are_dense() {
        let model = mixing_model();
        let grid = TimeGrid::for_model(&model, 3).unwrap();
        let l = LpLayout::new(&model, grid);
        assert_eq!(l.n_vars(), 7);
        assert_eq!(l.var(2, 0, 1), 5);
        assert_eq!(l.slack(0), 6);
        assert_eq!(l.n_rows(), 4);
        assert_eq!(l.constraint_row(0), 3);
    }

    #[test]
    fn mixing_instance_by_both_routes() {
        let model = mixing_model();
        let grid = TimeGrid::for_model(&model, 4).unwrap();
        for sol in [
            solve_constrained(&model, grid).unwrap(),
            solve_constrained_dense(&model, grid).unwrap(),
        ] {
            assert!((sol.lp.objective - 0.5).abs() < 1e-12, "{:?}", sol.method);
            assert!((sol.multipliers[0] - 0.5).abs() < 1e-12);
            assert!(sol.lp.residuals.max() < 1e-12, "{:?}", sol.lp.residuals);
            let total: f64 = (0..4).map(|k| sol.occupation.mass(k, 0, 1)).sum::<f64>() / 4.0;
            assert!((total - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn column_generation_mixes_every_cell() {
        let model = mixing_model();
        let grid = TimeGrid::for_model(&model, 5).unwrap();
        let sol = solve_constrained(&model, grid).unwrap();
        for k in 0..5 {
            assert!((sol.occupation.mass(k, 0, 0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_bound_is_reported() {
        let model = mixing_model().with_constraint_bounds(vec![-0.1]).unwrap();
        let grid = TimeGrid::for_model(&model, 3).unwrap();
        assert!(matches!(
            solve_constrained(&model, grid),
            Err(OccupationError::Status(LpStatus::Infeasible))
        ));
        assert!(matches!(
            solve_constrained_dense(&model, grid),
            Err(OccupationError::Status(LpStatus::Infeasible))
        ));
    }

    #[test]
    fn euler_occupation_is_feasible() {
        let model = mixing_model();
        let grid = TimeGrid::for_model(&model, 3).unwrap();
        let policy = MarkovPolicy::uniform(&model, grid);
        let eta = euler_occupation(&model, grid, &policy).unwrap();
        let layout = LpLayout::new(&model, grid);
        let mut x = vec![0.0; layout.n_vars()];
        for k in 0..3 {
            for a in 0..2 {
                x[layout.var(k, 0, a)] = eta.mass(k, 0, a);
            }
        }
        x[layout.slack(0)] = 1.0 - eta.expected_cost(&model, 1);
        let res = structural_residuals(&model, grid, &x, &vec![0.0; layout.n_rows()]);
        assert!(res.primal < 1e-15);
    }
}
