//! Shared instances and independent oracles for the integration tests.
#![allow(dead_code)]

use ctmdp::dp::TimeGrid;
use ctmdp::lp::LpProblem;
use ctmdp::model::{CtmdpModel, MarkovPolicy, ModelParts};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two states, unit rates both ways, cost 1 in state 1, start in state 0.
pub fn two_state(horizon: f64) -> CtmdpModel {
    CtmdpModel::new(ModelParts {
        actions: vec![vec![vec![0.0]], vec![vec![0.0]]],
        rates: vec![vec![vec![-1.0, 1.0]], vec![vec![1.0, -1.0]]],
        costs: vec![vec![vec![0.0], vec![1.0]]],
        constraint_bounds: vec![],
        horizon,
        initial_dist: vec![1.0, 0.0],
        weight: vec![1.0, 1.0],
        truncation_level: None,
    })
    .unwrap()
}

/// `g(0, 0) = T/2 - (1 - e^{-2T})/4` for [`two_state`].
pub fn two_state_value(horizon: f64) -> f64 {
    horizon / 2.0 - (1.0 - (-2.0 * horizon).exp()) / 4.0
}

/// One state, no motion, actions with `c0 = (1, 0)`, `c1 = (0, 2)`, `d1 = 1`.
/// The optimum mixes the actions half and half: value `1/2`.
pub fn mixing_model() -> CtmdpModel {
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

/// Random instance with 2..=`max_states` states and 1..=`max_actions` actions
/// per state, off-diagonal rates in `[0, 2)`, objective costs in `[0, 1)` and
/// `n_constraints` extra cost tables in `[0, 1)`. Weights `w(i) = 1 + i`.
pub fn random_model(
    seed: u64,
    max_states: usize,
    max_actions: usize,
    n_constraints: usize,
) -> CtmdpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_states);
    let n_actions: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=max_actions)).collect();
    let actions = n_actions
        .iter()
        .map(|&k| (0..k).map(|a| vec![a as f64]).collect())
        .collect();
    let rates = (0..n)
        .map(|i| {
            (0..n_actions[i])
                .map(|_| {
                    let mut row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
                    row[i] = 0.0;
                    row[i] = -row.iter().sum::<f64>();
                    row
                })
                .collect()
        })
        .collect();
    let costs = (0..=n_constraints)
        .map(|_| {
            (0..n)
                .map(|i| (0..n_actions[i]).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect()
        })
        .collect();
    let mut initial_dist: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let total: f64 = initial_dist.iter().sum();
    initial_dist.iter_mut().for_each(|g| *g /= total);
    CtmdpModel::new(ModelParts {
        actions,
        rates,
        costs,
        constraint_bounds: vec![0.5; n_constraints],
        horizon: 1.0,
        initial_dist,
        weight: (0..n).map(|i| 1.0 + i as f64).collect(),
        truncation_level: None,
    })
    .unwrap()
}

/// A random deterministic Markov policy on `grid`.
pub fn random_policy(model: &CtmdpModel, grid: TimeGrid, seed: u64) -> MarkovPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = (0..grid.n_nodes())
        .map(|_| {
            (0..model.n_states())
                .map(|i| rng.gen_range(0..model.n_actions(i)))
                .collect()
        })
        .collect();
    MarkovPolicy::deterministic(model, grid, actions).unwrap()
}

/// A random stationary randomized policy on `grid`.
pub fn random_stationary_mix(model: &CtmdpModel, grid: TimeGrid, seed: u64) -> MarkovPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row: Vec<Vec<f64>> = (0..model.n_states())
        .map(|i| {
            let w: Vec<f64> = (0..model.n_actions(i))
                .map(|_| rng.gen_range(0.1..1.0))
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    MarkovPolicy::randomized(model, grid, vec![row; grid.n_nodes()]).unwrap()
}

/// `g(0, .)` for `policy` and cost table `cost_index`, by exact propagation
/// `[g; 1](t_k) = exp(dt [[Q_k, c_k], [0, 0]]) [g; 1](t_{k+1})` with the node-`k`
/// law on cell `k`. Consecutive cells with equal laws share one exponential.
pub fn matrix_exp_value(model: &CtmdpModel, policy: &MarkovPolicy, cost_index: usize) -> Vec<f64> {
    let n = model.n_states();
    let grid = policy.grid();
    let generator = |k: usize| {
        let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for (a, p) in policy.mix(k, i).iter() {
                for j in 0..n {
                    m[(i, j)] += p * model.rate(i, a, j);
                }
                m[(i, n)] += p * model.cost(cost_index, i, a);
            }
        }
        m
    };
    let mut v = DVector::<f64>::zeros(n + 1);
    v[n] = 1.0;
    let mut k = grid.n_steps();
    while k > 0 {
        let g = generator(k - 1);
        let mut start = k - 1;
        while start > 0 && generator(start - 1) == g {
            start -= 1;
        }
        let span = (k - start) as f64 * grid.dt();
        v = (g * span).exp() * v;
        k = start;
    }
    v.as_slice()[..n].to_vec()
}

/// `min c'x` over `A_eq x = b_eq, A_ub x <= b_ub, x >= 0` by enumerating every
/// basis of the slack form. `None` when no basis is feasible.
pub fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
    let n = p.n_vars();
    let m = p.n_rows();
    let width = n + p.n_ub();
    let mut a = DMatrix::<f64>::zeros(m, width);
    let mut b = DVector::<f64>::zeros(m);
    for (r, row) in p.eq_matrix.iter().chain(&p.ub_matrix).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            a[(r, j)] = v;
        }
    }
    for (r, &v) in p.eq_rhs.iter().chain(&p.ub_rhs).enumerate() {
        b[r] = v;
    }
    for s in 0..p.n_ub() {
        a[(p.n_eq() + s, n + s)] = 1.0;
    }
    let mut best: Option<f64> = None;
    for basis in combinations(width, m) {
        let sub = DMatrix::from_fn(m, m, |r, c| a[(r, basis[c])]);
        if sub.determinant().abs() < 1e-10 {
            continue;
        }
        let Some(xb) = sub.lu().solve(&b) else {
            continue;
        };
        if xb.iter().any(|&x| x < -1e-9) {
            continue;
        }
        let value: f64 = basis
            .iter()
            .zip(xb.iter())
            .filter(|(&j, _)| j < n)
            .map(|(&j, &x)| p.objective[j] * x)
            .sum();
        best = Some(best.map_or(value, |b| b.min(value)));
    }
    best
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..n {
            if n - j < k - cur.len() {
                break;
            }
            cur.push(j);
            go(j + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Random bounded LP: `n` variables, `n_eq` equality rows and `n_ub` rows
/// `<=`, plus a final row `sum x <= 10` so every feasible set is bounded.
pub fn random_lp(seed: u64, n: usize, n_eq: usize, n_ub: usize) -> LpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LpProblem::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    for _ in 0..n_eq {
        p.add_eq(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            rng.gen_range(-1.0..1.0),
        );
    }
    for _ in 0..n_ub {
        p.add_ub(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            rng.gen_range(-0.5..1.0),
        );
    }
    p.add_ub(vec![1.0; n], 10.0);
    p
}
