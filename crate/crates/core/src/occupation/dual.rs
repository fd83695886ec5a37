//! Lagrangian dual of the constrained problem.
//!
//! For multipliers `u >= 0` the dual function is
//! `D(u) = sum_i gamma(i) g_u(i, 0) - sum_n u_n d_n`, where `g_u` solves the
//! optimality equation for the cost `c_0 + sum_n u_n c_n`. `D` is concave and
//! is maximized by golden-section search (one constraint) or by cyclic
//! projected coordinate ascent.
//!
//! At the maximizer the function `h(t, i) = T min_a {c_u(i,a) + sum_j q(j|i,a) g_u(j,t)}`
//! is rebuilt on the grid and the pointwise inequality
//!
//! ```text
//! T c_0(i,a) - h(t,i) + int_t^T sum_j h(s,j) q(j|i,a) ds + T sum_n u_n c_n(i,a) >= 0
//! ```
//!
//! is checked at every node, with the integral taken by the end-corrected
//! trapezoid rule using `dh/dt = -sum_l q(l|i,a*) h(t,l)`.

use std::io::{self, Write};

use crate::dp::{hamiltonian, solve_backward, TimeGrid};
use crate::model::CtmdpModel;

use super::lp::euler_values;
use super::{solve_constrained, OccupationError};

/// Allowed violation of the pointwise inequality, relative to `w^2(i)`.
pub const DUAL_FEASIBILITY_TOL: f64 = 1e-6;

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const MAX_MULTIPLIER: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSearch {
    /// First trial width of the bracket for each multiplier.
    pub initial_upper: f64,
    /// Width at which a golden-section search stops, relative to `1 + upper`.
    pub tol: f64,
    /// Budget of dual-function evaluations.
    pub max_evaluations: usize,
    /// Coordinate sweeps when there are several constraints.
    pub max_sweeps: usize,
}

impl Default for DualSearch {
    fn default() -> Self {
        Self {
            initial_upper: 1.0,
            tol: 1e-10,
            max_evaluations: 2_000,
            max_sweeps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    /// `u*_n >= 0`.
    pub multipliers: Vec<f64>,
    /// `D(u*)`.
    pub dual: f64,
    pub primal: f64,
    /// `primal - dual`.
    pub gap: f64,
    /// `D(u*)` with the LP's own discrete dynamic program; never above `primal`.
    pub discrete_dual: f64,
    pub discrete_gap: f64,
    /// Every `(u, D(u))` evaluated, in order.
    pub samples: Vec<(Vec<f64>, f64)>,
    /// `h(t_k, i)` indexed `[k][i]`.
    pub h_tilde: Vec<Vec<f64>>,
    /// Smallest left side of the pointwise inequality divided by `w^2(i)`.
    pub feasibility_worst_slack: f64,
    /// `(node, state, action)` attaining the smallest slack.
    pub feasibility_at: Option<(usize, usize, usize)>,
    /// `max |h| / w^2`.
    pub h_norm: f64,
    pub evaluations: usize,
    pub budget_exhausted: bool,
}

impl DualCertificate {
    pub fn dual_feasible(&self) -> bool {
        self.feasibility_worst_slack >= -DUAL_FEASIBILITY_TOL
    }

    pub fn write_report<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (n, u) in self.multipliers.iter().enumerate() {
            writeln!(out, "u_{}={u}", n + 1)?;
        }
        writeln!(out, "primal={}", self.primal)?;
        writeln!(out, "dual={}", self.dual)?;
        writeln!(out, "gap={}", self.gap)?;
        writeln!(out, "discrete_dual={}", self.discrete_dual)?;
        writeln!(out, "discrete_gap={}", self.discrete_gap)?;
        writeln!(
            out,
            "dual_feasibility_worst_slack={}",
            self.feasibility_worst_slack
        )?;
        writeln!(out, "dual_feasible={}", self.dual_feasible())?;
        writeln!(out, "h_norm={}", self.h_norm)?;
        writeln!(out, "dual_evaluations={}", self.evaluations)?;
        writeln!(out, "dual_budget_exhausted={}", self.budget_exhausted)
    }
}

struct Search<'a> {
    model: &'a CtmdpModel,
    grid: TimeGrid,
    samples: Vec<(Vec<f64>, f64)>,
    budget: usize,
    exhausted: bool,
}

impl Search<'_> {
    fn value(&mut self, u: &[f64]) -> Result<f64, OccupationError> {
        if self.samples.len() >= self.budget {
            self.exhausted = true;
        }
        let d = dual_value(self.model, self.grid, u)?;
        self.samples.push((u.to_vec(), d));
        Ok(d)
    }

    /// Maximizes along coordinate `n` from `u`, returning the best point found.
    fn line(
        &mut self,
        u: &[f64],
        n: usize,
        opts: &DualSearch,
    ) -> Result<(f64, f64), OccupationError> {
        let at = |x: f64| {
            let mut v = u.to_vec();
            v[n] = x;
            v
        };
        let mut best = (u[n], self.value(u)?);
        let keep = |best: &mut (f64, f64), x: f64, d: f64| {
            if d > best.1 {
                *best = (x, d);
            }
        };

        let d0 = self.value(&at(0.0))?;
        keep(&mut best, 0.0, d0);
        let mut hi = opts.initial_upper.max(u[n]).max(f64::MIN_POSITIVE);
        let mut d_hi = self.value(&at(hi))?;
        keep(&mut best, hi, d_hi);
        loop {
            if self.exhausted {
                return Ok(best);
            }
            let d_next = self.value(&at(2.0 * hi))?;
            keep(&mut best, 2.0 * hi, d_next);
            if d_next <= d_hi {
                hi *= 2.0;
                break;
            }
            hi *= 2.0;
            d_hi = d_next;
            if hi > MAX_MULTIPLIER {
                self.exhausted = true;
                return Ok(best);
            }
        }

        let (mut a, mut c) = (0.0, hi);
        let mut x1 = c - GOLDEN * (c - a);
        let mut x2 = a + GOLDEN * (c - a);
        let mut f1 = self.value(&at(x1))?;
        let mut f2 = self.value(&at(x2))?;
        keep(&mut best, x1, f1);
        keep(&mut best, x2, f2);
        while c - a > opts.tol * (1.0 + c) && !self.exhausted {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + GOLDEN * (c - a);
                f2 = self.value(&at(x2))?;
                keep(&mut best, x2, f2);
            } else {
                c = x2;
                x2 = x1;
                f2 = f1;
                x1 = c - GOLDEN * (c - a);
                f1 = self.value(&at(x1))?;
                keep(&mut best, x1, f1);
            }
        }
        Ok(best)
    }
}

/// `D(u)` through the RK4 value solve.
pub fn dual_value(model: &CtmdpModel, grid: TimeGrid, u: &[f64]) -> Result<f64, OccupationError> {
    let mut w = vec![1.0];
    w.extend_from_slice(u);
    let (values, _) = solve_backward(model, grid, &w)?;
    let penalty: f64 = u
        .iter()
        .zip(model.constraint_bounds())
        .map(|(u, d)| u * d)
        .sum();
    Ok(values.expected_initial(model) - penalty)
}

/// `D(u)` through the discrete dynamic program that prices the LP.
pub fn discrete_dual_value(model: &CtmdpModel, grid: TimeGrid, u: &[f64]) -> f64 {
    let mut w = vec![1.0];
    w.extend_from_slice(u);
    let (values, _) = euler_values(model, grid, &model.scalarized_costs(&w));
    let start: f64 = model
        .initial_dist()
        .iter()
        .zip(&values[0])
        .map(|(g, v)| g * v)
        .sum();
    start
        - u.iter()
            .zip(model.constraint_bounds())
            .map(|(u, d)| u * d)
            .sum::<f64>()
}

/// Maximizes `D` and certifies the result against the LP optimum.
pub fn lagrangian_dual(
    model: &CtmdpModel,
    grid: TimeGrid,
    search: DualSearch,
) -> Result<DualCertificate, OccupationError> {
    let primal = solve_constrained(model, grid)?.lp.objective;
    lagrangian_dual_against(model, grid, search, primal)
}

/// As [`lagrangian_dual`], with the primal value supplied by the caller.
pub fn lagrangian_dual_against(
    model: &CtmdpModel,
    grid: TimeGrid,
    opts: DualSearch,
    primal: f64,
) -> Result<DualCertificate, OccupationError> {
    let n_c = model.n_constraints();
    if n_c == 0 {
        return Err(OccupationError::NoConstraints);
    }
    let mut s = Search {
        model,
        grid,
        samples: Vec::new(),
        budget: opts.max_evaluations,
        exhausted: false,
    };
    let mut u = vec![0.0; n_c];
    let mut best = s.value(&u)?;
    for _ in 0..opts.max_sweeps.max(1) {
        let before = best;
        for n in 0..n_c {
            let (x, d) = s.line(&u, n, &opts)?;
            if d >= best {
                u[n] = x;
                best = d;
            }
        }
        if n_c == 1 || best - before <= opts.tol * (1.0 + best.abs()) || s.exhausted {
            break;
        }
    }

    let mut w = vec![1.0];
    w.extend_from_slice(&u);
    let (values, _) = solve_backward(model, grid, &w)?;
    let costs = model.scalarized_costs(&w);
    let feas = pointwise_feasibility(model, grid, &costs, &values_table(&values, grid));
    let discrete_dual = discrete_dual_value(model, grid, &u);
    Ok(DualCertificate {
        multipliers: u,
        dual: best,
        primal,
        gap: primal - best,
        discrete_dual,
        discrete_gap: primal - discrete_dual,
        evaluations: s.samples.len(),
        samples: s.samples,
        h_tilde: feas.h,
        feasibility_worst_slack: feas.worst,
        feasibility_at: feas.at,
        h_norm: feas.h_norm,
        budget_exhausted: s.exhausted,
    })
}

fn values_table(values: &crate::dp::ValueGrid, grid: TimeGrid) -> Vec<Vec<f64>> {
    (0..grid.n_nodes())
        .map(|k| values.at_node(k).to_vec())
        .collect()
}

struct Feasibility {
    h: Vec<Vec<f64>>,
    worst: f64,
    at: Option<(usize, usize, usize)>,
    h_norm: f64,
}

fn pointwise_feasibility(
    model: &CtmdpModel,
    grid: TimeGrid,
    costs: &[Vec<f64>],
    g: &[Vec<f64>],
) -> Feasibility {
    let n = model.n_states();
    let t = grid.horizon();
    let dt = grid.dt();
    let nodes = grid.n_nodes();
    let mut h = vec![vec![0.0; n]; nodes];
    let mut slope = vec![vec![0.0; n]; nodes];
    let mut arg = vec![0usize; n];
    for k in 0..nodes {
        hamiltonian(model, costs, &g[k], &mut h[k], Some(&mut arg));
        h[k].iter_mut().for_each(|v| *v *= t);
        for i in 0..n {
            slope[k][i] = -model.rate_row(i, arg[i]).apply(i, &h[k]);
        }
    }
    let mut tail = vec![vec![0.0; n]; nodes];
    for k in (0..nodes - 1).rev() {
        for j in 0..n {
            tail[k][j] = tail[k + 1][j] + 0.5 * dt * (h[k][j] + h[k + 1][j])
                - dt * dt / 12.0 * (slope[k + 1][j] - slope[k][j]);
        }
    }
    let mut worst = f64::INFINITY;
    let mut at = None;
    let mut h_norm = 0.0_f64;
    for k in 0..nodes {
        for i in 0..n {
            let w2 = model.weight(i).powi(2);
            h_norm = h_norm.max(h[k][i].abs() / w2);
            for a in 0..model.n_actions(i) {
                let lhs = t * costs[i][a] - h[k][i] + model.rate_row(i, a).apply(i, &tail[k]);
                let rel = lhs / w2;
                if rel < worst {
                    worst = rel;
                    at = Some((k, i, a));
                }
            }
        }
    }
    Feasibility {
        h,
        worst,
        at,
        h_norm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupation::lp::tests::mixing_model;

    #[test]
    fn mixing_instance_dual_is_one_half() {
        let model = mixing_model();
        let grid = TimeGrid::for_model(&model, 10).unwrap();
        let cert = lagrangian_dual(&model, grid, DualSearch::default()).unwrap();
        assert!(
            (cert.multipliers[0] - 0.5).abs() < 1e-8,
            "{:?}",
            cert.multipliers
        );
        assert!((cert.dual - 0.5).abs() < 1e-9);
        assert!((cert.primal - 0.5).abs() < 1e-12);
        assert!(cert.gap.abs() < 1e-9);
        assert!(cert.discrete_gap >= -1e-12);
        assert!(cert.dual_feasible(), "{}", cert.feasibility_worst_slack);
        assert!(!cert.budget_exhausted);
    }

    #[test]
    fn slack_bound_gives_zero_multiplier() {
        let model = mixing_model().with_constraint_bounds(vec![100.0]).unwrap();
        let grid = TimeGrid::for_model(&model, 10).unwrap();
        let cert = lagrangian_dual(&model, grid, DualSearch::default()).unwrap();
        assert!(cert.multipliers[0] < 1e-8);
        assert!(cert.dual.abs() < 1e-8);
        assert!(cert.primal.abs() < 1e-12);
    }

    #[test]
    fn dual_function_formula() {
        let model = mixing_model();
        let grid = TimeGrid::for_model(&model, 4).unwrap();
        for &u in &[0.0, 0.2, 0.5, 0.9, 3.0] {
            let expected = f64::min(1.0, 2.0 * u) - u;
            assert!((dual_value(&model, grid, &[u]).unwrap() - expected).abs() < 1e-12);
            assert!((discrete_dual_value(&model, grid, &[u]) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn report_lists_keys() {
        let model = mixing_model();
        let grid = TimeGrid::for_model(&model, 2).unwrap();
        let cert = lagrangian_dual(&model, grid, DualSearch::default()).unwrap();
        let mut buf = Vec::new();
        cert.write_report(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.contains("u_1=") && text.contains("gap=") && text.contains("dual_feasible=true")
        );
    }
}
