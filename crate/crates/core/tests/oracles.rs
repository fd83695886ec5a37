//! Solvers against independently computed answers.

mod common;

use common::{
    matrix_exp_value, random_lp, random_model, random_policy, random_stationary_mix,
    vertex_enumeration,
};
use ctmdp::dp::{evaluate_policy, solve_backward, TimeGrid};
use ctmdp::lp::{solve_lp, LpStatus};
use ctmdp::model::{BirthDeath, LinearCost};
use ctmdp::occupation::{
    euler_occupation, solve_constrained, solve_constrained_dense, OccupationError,
};

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut optimal = 0;
    for seed in 0..30u64 {
        let n = 2 + (seed % 4) as usize;
        let n_eq = ((seed / 4) % 3) as usize;
        let n_ub = ((seed / 2) % 3) as usize;
        let p = random_lp(seed, n, n_eq.min(n - 1), n_ub);
        let sol = solve_lp(&p).unwrap();
        match vertex_enumeration(&p) {
            None => assert_eq!(sol.status, LpStatus::Infeasible, "seed {seed}"),
            Some(best) => {
                assert_eq!(sol.status, LpStatus::Optimal, "seed {seed}");
                assert!(
                    (sol.objective - best).abs() <= 1e-7 * (1.0 + best.abs()),
                    "seed {seed}: {} vs {best}",
                    sol.objective
                );
                assert!(
                    sol.residuals.max() <= 1e-7,
                    "seed {seed}: {:?}",
                    sol.residuals
                );
                optimal += 1;
            }
        }
    }
    // The family must exercise both outcomes.
    assert!((10..30).contains(&optimal), "{optimal} optimal");
}

#[test]
fn policy_evaluation_matches_matrix_exponential() {
    for seed in 0..6u64 {
        let model = random_model(seed, 6, 3, 0);
        let grid = TimeGrid::for_model(&model, 1000).unwrap();
        for policy in [
            random_stationary_mix(&model, grid, seed + 100),
            random_policy(&model, grid, seed + 200),
        ] {
            let dp = evaluate_policy(&model, grid, &policy, 0).unwrap();
            let oracle = matrix_exp_value(&model, &policy, 0);
            for (i, v) in oracle.iter().enumerate() {
                assert!(
                    (dp.value(i, 0) - v).abs() <= 1e-8,
                    "seed {seed}, state {i}: {} vs {v}",
                    dp.value(i, 0)
                );
            }
        }
    }
}

#[test]
fn node_argmin_policy_converges_to_the_optimal_value() {
    // The min is re-evaluated at every RK4 stage while the recorded action is
    // the node argmin, so the recorded policy is optimal only up to O(dt).
    for seed in 10..14u64 {
        let model = random_model(seed, 6, 3, 0);
        let grid = TimeGrid::for_model(&model, 400).unwrap();
        let (values, policy) = solve_backward(&model, grid, &[1.0]).unwrap();
        let fine = TimeGrid::for_model(&model, 800).unwrap();
        let (values_fine, policy_fine) = solve_backward(&model, fine, &[1.0]).unwrap();
        let oracle = matrix_exp_value(&model, &policy, 0);
        let oracle_fine = matrix_exp_value(&model, &policy_fine, 0);
        for i in 0..model.n_states() {
            let excess = oracle[i] - values.value(i, 0);
            let excess_fine = oracle_fine[i] - values_fine.value(i, 0);
            assert!(
                excess >= -1e-10,
                "seed {seed}, state {i}: policy beats the optimum by {excess:e}"
            );
            assert!(excess <= 1e-5, "seed {seed}, state {i}: {excess:e}");
            assert!(
                excess_fine <= 0.5 * excess.max(0.0) + 1e-12,
                "seed {seed}, state {i}: {excess:e} -> {excess_fine:e}"
            );
        }
    }
}

#[test]
fn column_generation_agrees_with_the_dense_lp() {
    let mut feasible = 0;
    for seed in 20..32u64 {
        let model = random_model(seed, 3, 2, 1);
        let grid = TimeGrid::for_model(&model, 8).unwrap();
        match (
            solve_constrained(&model, grid),
            solve_constrained_dense(&model, grid),
        ) {
            (Ok(cg), Ok(dense)) => {
                let (a, b) = (cg.lp.objective, dense.lp.objective);
                assert!(
                    (a - b).abs() <= 1e-9 * (1.0 + b.abs()),
                    "seed {seed}: {a} vs {b}"
                );
                assert!(
                    cg.lp.residuals.max() <= 1e-9,
                    "seed {seed}: {:?}",
                    cg.lp.residuals
                );
                feasible += 1;
            }
            (Err(OccupationError::Status(x)), Err(OccupationError::Status(y))) => {
                assert_eq!(
                    (x, y),
                    (LpStatus::Infeasible, LpStatus::Infeasible),
                    "seed {seed}"
                );
            }
            (x, y) => panic!(
                "seed {seed}: routes disagree: {:?} / {:?}",
                x.err(),
                y.err()
            ),
        }
    }
    assert!(feasible > 0);
}

#[test]
fn euler_occupation_costs_match_the_lp_point() {
    // The disintegrated policy regenerates the LP occupation cell by cell.
    for seed in 40..46u64 {
        let model = random_model(seed, 4, 3, 1)
            .with_constraint_bounds(vec![0.9])
            .unwrap();
        let grid = TimeGrid::for_model(&model, 50).unwrap();
        let Ok(sol) = solve_constrained(&model, grid) else {
            continue;
        };
        let replay = euler_occupation(&model, grid, &sol.policy).unwrap();
        for (n, c) in sol.costs.iter().enumerate() {
            assert!(
                (replay.expected_cost(&model, n) - c).abs() <= 1e-9,
                "seed {seed}, cost {n}"
            );
        }
    }
}

#[test]
fn slack_constraint_follows_the_backward_argmin() {
    let model = BirthDeath::new(1.0, 2.0, 8, 3)
        .with_costs(
            vec![LinearCost::holding(), LinearCost::effort(1.0, 2.0)],
            vec![1e6],
        )
        .starting_at(2)
        .build()
        .unwrap();
    let grid = TimeGrid::for_model(&model, 400).unwrap();
    let sol = solve_constrained(&model, grid).unwrap();
    let (_, dp_policy) = solve_backward(&model, grid, &[1.0, 0.0]).unwrap();
    let (mut agree, mut total) = (0.0, 0.0);
    for k in 0..grid.n_steps() {
        for i in 0..model.n_states() {
            let mass = sol.occupation.state_mass(k, i);
            if mass <= 1e-12 {
                continue;
            }
            let best = dp_policy.actions().unwrap()[k][i];
            total += mass;
            agree += sol.occupation.mass(k, i, best);
        }
    }
    assert!(agree >= 0.99 * total, "{agree} of {total}");
}

#[test]
fn zero_objective_gives_zero() {
    let base = random_model(50, 4, 3, 1);
    let mut parts = base.to_parts();
    parts.costs[0].iter_mut().flatten().for_each(|c| *c = 0.0);
    parts.constraint_bounds = vec![0.9];
    let model = ctmdp::model::CtmdpModel::new(parts).unwrap();
    let grid = TimeGrid::for_model(&model, 20).unwrap();
    assert_eq!(solve_constrained(&model, grid).unwrap().lp.objective, 0.0);
}
