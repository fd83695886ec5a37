//! Drift and growth certificates for a weight function `w`.

use serde::{Deserialize, Serialize};

use super::{CtmdpModel, RATE_TOL};

/// Candidate constants for the drift/growth conditions.
///
/// * `sum_j w(j)   q(j|i,a) <= rho1 w(i)   + b1`
/// * `sum_j w^2(j) q(j|i,a) <= rho2 w^2(i) + b2`
/// * `sum_j w^3(j) q(j|i,a) <= rho3 w^3(i) + b3`
/// * `q*(i) <= L w(i)`
/// * `|c_n(i,a)| <= M w(i)` for every cost index `n`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConstants {
    pub rho1: f64,
    pub b1: f64,
    pub rho2: f64,
    pub b2: f64,
    pub rho3: f64,
    pub b3: f64,
    #[serde(rename = "L")]
    pub rate_bound: f64,
    #[serde(rename = "M")]
    pub cost_bound: f64,
}

impl DriftConstants {
    /// Constants proved for the controlled birth-death system with `w(i) = i + 1`.
    pub fn birth_death(lambda: f64, mu: f64, cost_bound: f64) -> Self {
        Self {
            rho1: lambda + mu,
            b1: lambda,
            rho2: 7.0 * lambda + 5.0 * mu,
            b2: 3.0 * lambda + mu,
            rho3: 31.0 * lambda + 13.0 * mu,
            b3: 7.0 * lambda + mu,
            rate_bound: 2.0 * lambda + mu,
            cost_bound,
        }
    }

    /// Smallest constants of the form `b = 0` that the model satisfies.
    ///
    /// The growth rates are floored at `1e-9` so that every `rho` stays positive.
    pub fn fit(model: &CtmdpModel) -> Self {
        let floor: f64 = 1e-9;
        let mut rho: [f64; 3] = [floor; 3];
        let mut rate_bound: f64 = floor;
        let mut cost_bound = 0.0_f64;
        for i in 0..model.n_states() {
            let wi = model.weight(i);
            rate_bound = rate_bound.max(model.q_star(i) / wi);
            for a in 0..model.n_actions(i) {
                for (p, r) in rho.iter_mut().enumerate() {
                    let d = weighted_drift(model, i, a, p as i32 + 1);
                    *r = r.max(d / wi.powi(p as i32 + 1));
                }
                for n in 0..model.n_costs() {
                    cost_bound = cost_bound.max(model.cost(n, i, a).abs() / wi);
                }
            }
        }
        Self {
            rho1: rho[0],
            b1: 0.0,
            rho2: rho[1],
            b2: 0.0,
            rho3: rho[2],
            b3: 0.0,
            rate_bound,
            cost_bound,
        }
    }

    /// Right-hand side of the moment bound
    /// `E[w(xi_t)] <= e^{rho1 t} w0 + (b1/rho1)(e^{rho1 t} - 1)`.
    pub fn weight_moment_bound(&self, w0: f64, t: f64) -> f64 {
        let growth = (self.rho1 * t).exp();
        growth * w0 + self.b1 * expm1_over(self.rho1, t)
    }
}

/// `(e^{rho t} - 1) / rho`, continuous at `rho = 0`.
pub(crate) fn expm1_over(rho: f64, t: f64) -> f64 {
    if rho == 0.0 {
        t
    } else {
        (rho * t).exp_m1() / rho
    }
}

/// Outcome of one inequality family over the finite `(i, a)` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionCheck {
    pub satisfied: bool,
    /// `max (lhs - rhs)`; non-positive when the inequality holds everywhere.
    pub worst_slack: f64,
    /// `(state, action)` attaining `worst_slack`.
    pub worst_at: Option<(usize, usize)>,
}

impl AssumptionCheck {
    fn new() -> Self {
        Self {
            satisfied: true,
            worst_slack: f64::NEG_INFINITY,
            worst_at: None,
        }
    }

    fn record(&mut self, slack: f64, at: (usize, usize)) {
        if slack.is_nan() || slack > self.worst_slack || self.worst_at.is_none() {
            self.worst_slack = slack;
            self.worst_at = Some(at);
        }
    }

    fn finish(mut self) -> Self {
        // NaN compares false and therefore fails.
        self.satisfied = self.worst_slack <= RATE_TOL;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftCertificate {
    pub constants: DriftConstants,
    /// First-moment drift (`w`).
    pub weight_drift: AssumptionCheck,
    /// Second-moment drift (`w^2`).
    pub weight_sq_drift: AssumptionCheck,
    /// Third-moment drift (`w^3`).
    pub weight_cube_drift: AssumptionCheck,
    /// `q* <= L w`.
    pub rate_growth: AssumptionCheck,
    /// `|c_n| <= M w`.
    pub cost_growth: AssumptionCheck,
}

impl DriftCertificate {
    pub fn all_satisfied(&self) -> bool {
        self.checks().iter().all(|(_, c)| c.satisfied)
    }

    pub fn checks(&self) -> [(&'static str, AssumptionCheck); 5] {
        [
            ("drift_w", self.weight_drift),
            ("drift_w2", self.weight_sq_drift),
            ("drift_w3", self.weight_cube_drift),
            ("rate_growth", self.rate_growth),
            ("cost_growth", self.cost_growth),
        ]
    }
}

/// `sum_j w^p(j) q(j | i, a)`.
pub(crate) fn weighted_drift(model: &CtmdpModel, state: usize, action: usize, power: i32) -> f64 {
    let row = model.rate_row(state, action);
    let mut acc = row.diag * model.weight(state).powi(power);
    for &(j, q) in &row.off {
        acc += q * model.weight(j).powi(power);
    }
    acc
}

/// Evaluates every inequality of `constants` by exhaustive maximum over the
/// truncated `(i, a)` table.
pub fn certify_drift(model: &CtmdpModel, constants: &DriftConstants) -> DriftCertificate {
    let mut drift = [AssumptionCheck::new(); 3];
    let mut rate_growth = AssumptionCheck::new();
    let mut cost_growth = AssumptionCheck::new();
    let rho = [constants.rho1, constants.rho2, constants.rho3];
    let b = [constants.b1, constants.b2, constants.b3];

    for i in 0..model.n_states() {
        let wi = model.weight(i);
        let mut worst_rate = (f64::NEG_INFINITY, 0);
        for a in 0..model.n_actions(i) {
            for p in 0..3 {
                let power = p as i32 + 1;
                let lhs = weighted_drift(model, i, a, power);
                let rhs = rho[p] * wi.powi(power) + b[p];
                drift[p].record(lhs - rhs, (i, a));
            }
            let row = model.rate_row(i, a);
            let q = row.diag.abs();
            if q > worst_rate.0 {
                worst_rate = (q, a);
            }
            for n in 0..model.n_costs() {
                cost_growth.record(
                    model.cost(n, i, a).abs() - constants.cost_bound * wi,
                    (i, a),
                );
            }
        }
        if model.n_actions(i) > 0 {
            rate_growth.record(worst_rate.0 - constants.rate_bound * wi, (i, worst_rate.1));
        }
    }

    DriftCertificate {
        constants: *constants,
        weight_drift: drift[0].finish(),
        weight_sq_drift: drift[1].finish(),
        weight_cube_drift: drift[2].finish(),
        rate_growth: rate_growth.finish(),
        cost_growth: cost_growth.finish(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tests::two_state_parts, ModelParts};

    #[test]
    fn zero_generator_slack_is_minus_rho_w() {
        let parts = ModelParts {
            actions: vec![vec![vec![]]],
            rates: vec![vec![vec![0.0]]],
            costs: vec![vec![vec![2.5]]],
            constraint_bounds: vec![],
            horizon: 1.0,
            initial_dist: vec![1.0],
            weight: vec![1.0],
            truncation_level: None,
        };
        let model = CtmdpModel::new(parts).unwrap();
        let k = DriftConstants {
            rho1: 1.0,
            b1: 0.0,
            rho2: 1.0,
            b2: 0.0,
            rho3: 1.0,
            b3: 0.0,
            rate_bound: 1.0,
            cost_bound: 2.5,
        };
        let cert = certify_drift(&model, &k);
        assert!(cert.all_satisfied());
        assert_eq!(cert.weight_drift.worst_slack, -1.0);
        assert_eq!(cert.rate_growth.worst_slack, -1.0);
        assert_eq!(cert.cost_growth.worst_slack, 0.0);
    }

    #[test]
    fn fitted_constants_certify() {
        let model = CtmdpModel::new(two_state_parts()).unwrap();
        let k = DriftConstants::fit(&model);
        // state 0: w-drift = 2 - 1 = 1 over w = 1.
        assert!((k.rho1 - 1.0).abs() < 1e-15);
        assert!((k.rate_bound - 1.0).abs() < 1e-15);
        assert!((k.cost_bound - 0.5).abs() < 1e-15);
        assert!(certify_drift(&model, &k).all_satisfied());
    }

    #[test]
    fn shrinking_the_rate_bound_reports_the_state() {
        let model = CtmdpModel::new(two_state_parts()).unwrap();
        let mut k = DriftConstants::fit(&model);
        k.rate_bound = 0.9;
        let cert = certify_drift(&model, &k);
        assert!(!cert.rate_growth.satisfied);
        assert_eq!(cert.rate_growth.worst_at, Some((0, 0)));
        assert!((cert.rate_growth.worst_slack - 0.1).abs() < 1e-12);
    }

    #[test]
    fn moment_bound_collapses_at_zero() {
        let k = DriftConstants::birth_death(1.0, 2.0, 1.0);
        assert_eq!(k.weight_moment_bound(3.0, 0.0), 3.0);
        let b = k.weight_moment_bound(1.0, 1.0);
        let expected = 3f64.exp() + (3f64.exp() - 1.0) / 3.0;
        assert!((b - expected).abs() < 1e-12);
        assert!((b - 26.447).abs() < 1e-3);
    }
}
