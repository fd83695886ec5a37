//! Dense two-phase primal simplex.
//!
//! Solves `min c'x` subject to `A_eq x = b_eq`, `A_ub x <= b_ub`, `x >= 0`.
//! Every row is scaled to unit max-abs coefficient and sign-flipped to a
//! non-negative right-hand side, then receives its own artificial column. The
//! artificial columns are kept through phase 2, which gives the simplex
//! multipliers directly. Pivoting follows Bland's rule throughout.
//!
//! Duals follow the convention `max b'y` subject to `A'y <= c`, with `y` free
//! on equality rows and `y <= 0` on inequality rows.

use std::io::{self, Write};

use thiserror::Error;

pub const DEFAULT_PIVOT_CAP: usize = 1_000_000;
/// Pivot and reduced-cost tolerance on the scaled tableau.
pub const PIVOT_TOL: f64 = 1e-10;
/// Largest phase-1 objective treated as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub eq_matrix: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub ub_matrix: Vec<Vec<f64>>,
    pub ub_rhs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    PivotLimit,
}

impl LpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
            LpStatus::PivotLimit => "pivot_limit",
        }
    }
}

/// Largest violations of the optimality conditions, measured on rows scaled
/// to unit max-abs coefficient.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LpResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    /// `|c'x - b'y|`.
    pub gap: f64,
}

impl LpResiduals {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.complementarity)
            .max(self.gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Equality rows first, then inequality rows.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
    pub residuals: LpResiduals,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub pivot_cap: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            pivot_cap: DEFAULT_PIVOT_CAP,
        }
    }
}

impl LpProblem {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            ..Self::default()
        }
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_matrix.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_ub(&mut self, row: Vec<f64>, rhs: f64) {
        self.ub_matrix.push(row);
        self.ub_rhs.push(rhs);
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn n_ub(&self) -> usize {
        self.ub_rhs.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_eq() + self.n_ub()
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.eq_matrix
            .iter()
            .zip(&self.eq_rhs)
            .chain(self.ub_matrix.iter().zip(&self.ub_rhs))
            .map(|(r, &b)| (r.as_slice(), b))
    }

    pub fn check(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.eq_matrix.len() != self.eq_rhs.len() || self.ub_matrix.len() != self.ub_rhs.len() {
            return Err(LpError::Dimension(
                "row count differs from right-hand side length".into(),
            ));
        }
        if let Some(r) = self
            .eq_matrix
            .iter()
            .chain(&self.ub_matrix)
            .find(|r| r.len() != n)
        {
            return Err(LpError::Dimension(format!(
                "row of length {} for {n} variables",
                r.len()
            )));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        if self
            .rows()
            .any(|(r, b)| !b.is_finite() || r.iter().any(|v| !v.is_finite()))
        {
            return Err(LpError::NonFinite("constraints"));
        }
        Ok(())
    }

    /// Residuals of a primal-dual pair under the sign convention of this module.
    pub fn residuals(&self, x: &[f64], y: &[f64]) -> LpResiduals {
        let n_eq = self.n_eq();
        let mut res = LpResiduals::default();
        let mut reduced: Vec<f64> = self.objective.clone();
        let mut dual_obj = 0.0;
        for (r, (row, b)) in self.rows().enumerate() {
            let scale = row
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
                .max(f64::MIN_POSITIVE);
            let ax: f64 = row.iter().zip(x).map(|(a, x)| a * x).sum();
            let yr = y[r];
            if r < n_eq {
                res.primal = res.primal.max((ax - b).abs() / scale);
            } else {
                res.primal = res.primal.max((ax - b).max(0.0) / scale);
                res.dual = res.dual.max(yr.max(0.0) * scale);
                res.complementarity = res.complementarity.max((yr * (b - ax)).abs());
            }
            for (d, a) in reduced.iter_mut().zip(row) {
                *d -= a * yr;
            }
            dual_obj += b * yr;
        }
        for (&xj, &dj) in x.iter().zip(&reduced) {
            res.primal = res.primal.max((-xj).max(0.0));
            res.dual = res.dual.max((-dj).max(0.0));
            res.complementarity = res.complementarity.max((xj * dj).abs());
        }
        let primal_obj: f64 = self.objective.iter().zip(x).map(|(c, x)| c * x).sum();
        res.gap = (primal_obj - dual_obj).abs();
        res
    }

    /// CPLEX LP text format with variables `x0, x1, ...`, rows `e*` and `u*`.
    pub fn write_lp<W: Write>(&self, mut out: W) -> io::Result<()> {
        fn terms<W: Write>(out: &mut W, coefs: &[f64]) -> io::Result<()> {
            let mut any = false;
            for (j, &c) in coefs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let sign = if c < 0.0 { '-' } else { '+' };
                write!(out, " {sign} {} x{j}", c.abs())?;
                any = true;
            }
            if !any {
                write!(out, " 0 x0")?;
            }
            Ok(())
        }
        writeln!(out, "Minimize")?;
        write!(out, " obj:")?;
        terms(&mut out, &self.objective)?;
        writeln!(out)?;
        writeln!(out, "Subject To")?;
        for (r, (row, &b)) in self.eq_matrix.iter().zip(&self.eq_rhs).enumerate() {
            write!(out, " e{r}:")?;
            terms(&mut out, row)?;
            writeln!(out, " = {b}")?;
        }
        for (r, (row, &b)) in self.ub_matrix.iter().zip(&self.ub_rhs).enumerate() {
            write!(out, " u{r}:")?;
            terms(&mut out, row)?;
            writeln!(out, " <= {b}")?;
        }
        writeln!(out, "End")
    }
}

struct Tableau {
    m: usize,
    /// Structural plus slack columns; artificials follow.
    n_real: usize,
    width: usize,
    cells: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

enum Phase {
    Done,
    Unbounded,
    Capped,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.at(r, c);
        for v in &mut self.cells[r * w..(r + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.cells.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, &pv) in self.obj.iter_mut().zip(prow.iter()) {
                *v -= f * pv;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Bland's rule over columns `0..limit`.
    fn run(&mut self, limit: usize, cap: usize) -> Phase {
        let rhs = self.rhs_col();
        loop {
            let Some(enter) = (0..limit).find(|&j| self.obj[j] < -PIVOT_TOL) else {
                return Phase::Done;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, enter);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.at(r, rhs) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        if (!tie && ratio < best) || (tie && self.basis[r] < self.basis[br]) {
                            Some((r, ratio))
                        } else {
                            Some((br, best))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Phase::Unbounded;
            };
            if self.pivots >= cap {
                return Phase::Capped;
            }
            self.pivot(r, enter);
        }
    }

    fn set_objective(&mut self, costs: &[f64]) {
        let w = self.width;
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..costs.len()].copy_from_slice(costs);
        for r in 0..self.m {
            let cb = costs.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for (v, &t) in self.obj.iter_mut().zip(&self.cells[r * w..(r + 1) * w]) {
                    *v -= cb * t;
                }
            }
        }
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    solve_lp_with(problem, LpOptions::default())
}

pub fn solve_lp_with(problem: &LpProblem, options: LpOptions) -> Result<LpSolution, LpError> {
    problem.check()?;
    let n = problem.n_vars();
    let n_eq = problem.n_eq();
    let m = problem.n_rows();
    let n_slack = problem.n_ub();
    let n_real = n + n_slack;
    let width = n_real + m + 1;

    let mut cells = vec![0.0; m * width];
    let mut factors = vec![1.0; m];
    for (r, (row, b)) in problem.rows().enumerate() {
        let scale = row.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        let f = sign / scale;
        factors[r] = f;
        let line = &mut cells[r * width..(r + 1) * width];
        for (v, a) in line.iter_mut().zip(row) {
            *v = a * f;
        }
        if r >= n_eq {
            line[n + r - n_eq] = f;
        }
        line[n_real + r] = 1.0;
        line[width - 1] = b * f;
    }

    let mut tab = Tableau {
        m,
        n_real,
        width,
        cells,
        obj: vec![0.0; width],
        basis: (n_real..n_real + m).collect(),
        pivots: 0,
    };

    let mut phase1 = vec![0.0; n_real + m];
    phase1[n_real..].iter_mut().for_each(|v| *v = 1.0);
    tab.set_objective(&phase1);
    let finish = |tab: &Tableau, status: LpStatus| {
        let mut x = vec![0.0; n];
        if matches!(status, LpStatus::Optimal) {
            for r in 0..tab.m {
                if tab.basis[r] < n {
                    x[tab.basis[r]] = tab.at(r, tab.rhs_col());
                }
            }
        }
        let duals: Vec<f64> = if matches!(status, LpStatus::Optimal) {
            (0..m)
                .map(|r| -tab.obj[tab.n_real + r] * factors[r])
                .collect()
        } else {
            vec![0.0; m]
        };
        let objective = problem.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
        let residuals = if matches!(status, LpStatus::Optimal) {
            problem.residuals(&x, &duals)
        } else {
            LpResiduals::default()
        };
        LpSolution {
            status,
            x,
            duals,
            objective,
            pivots: tab.pivots,
            residuals,
        }
    };

    match tab.run(n_real + m, options.pivot_cap) {
        Phase::Done => {}
        Phase::Capped => return Ok(finish(&tab, LpStatus::PivotLimit)),
        // Phase 1 is bounded below by zero.
        Phase::Unbounded => unreachable!("phase-1 objective is bounded"),
    }
    let infeasibility = -tab.obj[width - 1];
    if infeasibility > FEASIBILITY_TOL * (1.0 + m as f64) {
        return Ok(finish(&tab, LpStatus::Infeasible));
    }

    // Move zero-level artificials out of the basis where a real column allows it.
    for r in 0..m {
        if tab.basis[r] < n_real {
            continue;
        }
        if let Some(c) = (0..n_real).find(|&c| tab.at(r, c).abs() > 1e-9) {
            tab.pivot(r, c);
        }
    }

    let mut costs = vec![0.0; n_real + m];
    costs[..n].copy_from_slice(&problem.objective);
    tab.set_objective(&costs);
    let status = match tab.run(n_real, options.pivot_cap) {
        Phase::Done => LpStatus::Optimal,
        Phase::Unbounded => LpStatus::Unbounded,
        Phase::Capped => LpStatus::PivotLimit,
    };
    Ok(finish(&tab, status))
}
