//! Randomized invariants.

mod common;

use common::{random_model, random_policy};
use ctmdp::dp::{check_envelope, evaluate_policy, solve_backward, TimeGrid};
use ctmdp::model::{certify_drift, validate_model, BirthDeath, DriftConstants};
use ctmdp::occupation::{
    build_constrained_lp, discrete_dual_value, euler_occupation, solve_constrained, LpLayout,
};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn random_rate_rows_are_conservative(seed in any::<u64>()) {
        let model = random_model(seed, 6, 3, 1);
        prop_assert!(validate_model(&model).is_empty());
        for i in 0..model.n_states() {
            for a in 0..model.n_actions(i) {
                let s: f64 = (0..model.n_states()).map(|j| model.rate(i, a, j)).sum();
                prop_assert!(s.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn birth_death_presets_validate(
        lambda in 0.1f64..4.0,
        mu in 0.1f64..4.0,
        m in 2usize..40,
        grid in 2usize..6,
    ) {
        let model = BirthDeath::new(lambda, mu, m, grid).build().unwrap();
        prop_assert!(validate_model(&model).is_empty());
    }

    #[test]
    fn enlarging_constants_keeps_checks_satisfied(
        lambda in 0.1f64..4.0,
        mu in 0.1f64..4.0,
        m in 2usize..30,
        which in 0usize..8,
        factor in 1.0f64..3.0,
    ) {
        let spec = BirthDeath::new(lambda, mu, m, 3);
        let model = spec.build().unwrap();
        let base = DriftConstants::birth_death(lambda, mu, spec.cost_bound());
        let mut bigger = base;
        let slot = match which {
            0 => &mut bigger.rho1,
            1 => &mut bigger.b1,
            2 => &mut bigger.rho2,
            3 => &mut bigger.b2,
            4 => &mut bigger.rho3,
            5 => &mut bigger.b3,
            6 => &mut bigger.rate_bound,
            _ => &mut bigger.cost_bound,
        };
        *slot = *slot * factor + 0.01;
        let before = certify_drift(&model, &base);
        let after = certify_drift(&model, &bigger);
        for ((name, b), (_, a)) in before.checks().iter().zip(after.checks()) {
            prop_assert!(!b.satisfied || a.satisfied, "{name} flipped");
        }
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn value_is_monotone_in_cost(seed in any::<u64>()) {
        // c_1 >= 0, so c_0 + c_1 dominates c_0 pointwise.
        let model = random_model(seed, 5, 3, 1);
        let grid = TimeGrid::for_model(&model, 200).unwrap();
        let (low, _) = solve_backward(&model, grid, &[1.0, 0.0]).unwrap();
        let (high, _) = solve_backward(&model, grid, &[1.0, 1.0]).unwrap();
        for k in 0..grid.n_nodes() {
            for i in 0..model.n_states() {
                prop_assert!(high.value(i, k) >= low.value(i, k) - 1e-12);
            }
        }
        prop_assert!(low.at_node(grid.n_steps()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_markov_policy_beats_the_optimum(seed in any::<u64>(), policy_seed in any::<u64>()) {
        let model = random_model(seed, 5, 3, 0);
        let grid = TimeGrid::for_model(&model, 200).unwrap();
        let (opt, _) = solve_backward(&model, grid, &[1.0]).unwrap();
        let v = evaluate_policy(&model, grid, &random_policy(&model, grid, policy_seed), 0).unwrap();
        for i in 0..model.n_states() {
            prop_assert!(v.value(i, 0) >= opt.value(i, 0) - 1e-8);
        }
    }

    #[test]
    fn envelope_holds_under_fitted_constants(seed in any::<u64>()) {
        let model = random_model(seed, 6, 3, 0);
        let constants = DriftConstants::fit(&model);
        prop_assert!(certify_drift(&model, &constants).all_satisfied());
        let grid = TimeGrid::for_model(&model, 100).unwrap();
        let (values, _) = solve_backward(&model, grid, &[1.0]).unwrap();
        prop_assert!(check_envelope(&model, &constants, &values, 1.0).holds());
    }

    #[test]
    fn discrete_dual_is_concave(seed in any::<u64>(), u0 in 0.0f64..3.0, u1 in 0.0f64..3.0, theta in 0.0f64..1.0) {
        let model = random_model(seed, 5, 3, 1);
        let grid = TimeGrid::for_model(&model, 60).unwrap();
        let d0 = discrete_dual_value(&model, grid, &[u0]);
        let d1 = discrete_dual_value(&model, grid, &[u1]);
        let mid = discrete_dual_value(&model, grid, &[(1.0 - theta) * u0 + theta * u1]);
        prop_assert!(mid >= (1.0 - theta) * d0 + theta * d1 - 1e-9);
    }

    #[test]
    fn discrete_weak_duality(seed in any::<u64>(), u in 0.0f64..5.0) {
        let model = random_model(seed, 4, 3, 1);
        let grid = TimeGrid::for_model(&model, 20).unwrap();
        let sol = solve_constrained(&model, grid);
        prop_assume!(sol.is_ok());
        let primal = sol.unwrap().lp.objective;
        prop_assert!(discrete_dual_value(&model, grid, &[u]) <= primal + 1e-9);
    }

    #[test]
    fn convex_combinations_stay_feasible(seed in any::<u64>(), s0 in any::<u64>(), s1 in any::<u64>(), theta in 0.0f64..1.0) {
        let model = random_model(seed, 4, 3, 1).with_constraint_bounds(vec![10.0]).unwrap();
        let grid = TimeGrid::for_model(&model, 12).unwrap();
        let a = euler_occupation(&model, grid, &random_policy(&model, grid, s0)).unwrap();
        let b = euler_occupation(&model, grid, &random_policy(&model, grid, s1)).unwrap();
        let eta = a.mix(&b, theta);
        let layout = LpLayout::new(&model, grid);
        let mut x = vec![0.0; layout.n_vars()];
        for k in 0..grid.n_steps() {
            for i in 0..model.n_states() {
                for act in 0..model.n_actions(i) {
                    x[layout.var(k, i, act)] = eta.mass(k, i, act);
                }
            }
        }
        x[layout.slack(0)] = 10.0 - eta.expected_cost(&model, 1);
        let lp = build_constrained_lp(&model, grid).unwrap();
        let y = vec![0.0; lp.n_rows()];
        prop_assert!(lp.residuals(&x, &y).primal <= 1e-12);
    }
}
