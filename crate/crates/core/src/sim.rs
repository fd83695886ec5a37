//! Monte Carlo simulation of the controlled jump process.
//!
//! Paths are generated by thinning: in state `i` candidate events arrive at the
//! constant majorant rate `q*(i)`, and a candidate at time `t` is accepted with
//! probability `|q(i|i,a_t)| / q*(i)`, where `a_t` is drawn from the policy's
//! action law at `(i, t)`. This is exact for time-varying Markov policies.
//!
//! Replicate `r` of a run with seed `s` uses the ChaCha8 stream `r` of seed `s`,
//! so results do not depend on the thread count.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dp::TimeGrid;
use crate::model::{
    certify_drift, ActionMix, CtmdpModel, DriftConstants, MarkovPolicy, PolicyError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("initial state {state} outside 0..{n_states}")]
    State { state: usize, n_states: usize },
    #[error("need at least 2 replicates, got {0}")]
    Replicates(usize),
    #[error("time {t} outside (0, {horizon}]")]
    Time { t: f64, horizon: f64 },
    #[error("policy grid covers [0, {grid}] but the model horizon is {model}")]
    Horizon { grid: f64, model: f64 },
    #[error("cost index {index} out of range for {n_costs} tables")]
    CostIndex { index: usize, n_costs: usize },
    #[error("state {0} listed in the target set does not exist")]
    Subset(usize),
    #[error("drift certificate fails: {0}")]
    Certificate(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Piecewise-constant sample path on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Jump epochs `T_0 = 0 < T_1 < ...`, all below the horizon.
    pub epochs: Vec<f64>,
    /// `X_m`, the state held on `[T_m, T_{m+1})`.
    pub states: Vec<usize>,
    /// Action in effect at the start of each sojourn.
    pub actions: Vec<usize>,
    pub horizon: f64,
}

impl Trajectory {
    pub fn n_jumps(&self) -> usize {
        self.epochs.len() - 1
    }

    /// `xi_t`, right-continuous.
    pub fn state_at(&self, t: f64) -> usize {
        let m = self.epochs.partition_point(|&e| e <= t);
        self.states[m.saturating_sub(1)]
    }

    /// `(state, start, end)` for every sojourn, the last one stopped at `T`.
    pub fn sojourns(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.states.len()).map(move |m| {
            let end = self.epochs.get(m + 1).copied().unwrap_or(self.horizon);
            (self.states[m], self.epochs[m], end)
        })
    }

    /// `epoch,state,action,a1,...`.
    pub fn write_csv<W: Write>(&self, model: &CtmdpModel, mut out: W) -> io::Result<()> {
        let dims = self
            .states
            .iter()
            .zip(&self.actions)
            .map(|(&i, &a)| model.action_point(i, a).len())
            .max()
            .unwrap_or(0);
        let comps: String = (0..dims).map(|d| format!(",a{}", d + 1)).collect();
        writeln!(out, "epoch,state,action{comps}")?;
        for ((&t, &i), &a) in self.epochs.iter().zip(&self.states).zip(&self.actions) {
            write!(out, "{t},{i},{a}")?;
            for x in model.action_point(i, a) {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Sample mean with standard error `sd / sqrt(count)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl McEstimate {
    /// Uses the `n - 1` variance denominator; a single sample has zero error.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                count: 0,
            };
        }
        let mean = pairwise_sum(samples) / n as f64;
        if n == 1 {
            return Self {
                mean,
                std_error: 0.0,
                count: 1,
            };
        }
        let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            count: n,
        }
    }

    /// `|mean - target| <= z * se`.
    pub fn covers(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.std_error
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Time integrals of `f(i, cell)` over pieces of a path, where `f` is constant
/// on each grid cell.
struct CellIntegrator {
    grid: TimeGrid,
    /// `rate[i][k]`, the integrand on cell `k`.
    rate: Vec<Vec<f64>>,
    /// `cum[i][k] = int_0^{t_k} f(i, s) ds`.
    cum: Vec<Vec<f64>>,
}

impl CellIntegrator {
    fn new(
        model: &CtmdpModel,
        policy: &MarkovPolicy,
        per_action: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let grid = policy.grid();
        let rate: Vec<Vec<f64>> = (0..model.n_states())
            .map(|i| {
                (0..grid.n_steps())
                    .map(|k| policy.mix(k, i).expect(|a| per_action(i, a)))
                    .collect()
            })
            .collect();
        let cum = rate
            .iter()
            .map(|r| {
                let mut acc = 0.0;
                let mut out = Vec::with_capacity(r.len() + 1);
                out.push(0.0);
                for (k, v) in r.iter().enumerate() {
                    acc += v * (grid.node(k + 1) - grid.node(k));
                    out.push(acc);
                }
                out
            })
            .collect();
        Self { grid, rate, cum }
    }

    fn primitive(&self, state: usize, t: f64) -> f64 {
        let k = self.grid.cell_of(t);
        self.cum[state][k] + (t - self.grid.node(k)) * self.rate[state][k]
    }

    fn integral(&self, state: usize, from: f64, to: f64) -> f64 {
        self.primitive(state, to) - self.primitive(state, from)
    }

    /// `int_0^until f(xi_s, s) ds` along `path`.
    fn along(&self, path: &Trajectory, until: f64) -> f64 {
        let mut acc = 0.0;
        for (i, s, e) in path.sojourns() {
            if s >= until {
                break;
            }
            acc += self.integral(i, s, e.min(until));
        }
        acc
    }
}

fn check_inputs(model: &CtmdpModel, policy: &MarkovPolicy, i0: usize) -> Result<(), SimError> {
    if i0 >= model.n_states() {
        return Err(SimError::State {
            state: i0,
            n_states: model.n_states(),
        });
    }
    let grid = policy.grid().horizon();
    if (grid - model.horizon()).abs() > 1e-12 * model.horizon() {
        return Err(SimError::Horizon {
            grid,
            model: model.horizon(),
        });
    }
    policy.check(model)?;
    Ok(())
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

fn draw_action(policy: &MarkovPolicy, state: usize, t: f64, rng: &mut ChaCha8Rng) -> usize {
    match policy.mix_at(t, state) {
        ActionMix::Pure(a) => a,
        mix @ ActionMix::Mixed(_) => mix.sample(rng.gen()),
    }
}

fn draw_path(
    model: &CtmdpModel,
    policy: &MarkovPolicy,
    i0: usize,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let horizon = model.horizon();
    let mut state = i0;
    let mut t = 0.0;
    let mut path = Trajectory {
        epochs: vec![0.0],
        states: vec![i0],
        actions: vec![draw_action(policy, i0, 0.0, rng)],
        horizon,
    };
    loop {
        let majorant = model.q_star(state);
        if majorant <= 0.0 {
            break;
        }
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / majorant;
        if t >= horizon {
            break;
        }
        let a = draw_action(policy, state, t, rng);
        let row = model.rate_row(state, a);
        let exit = row.exit_rate();
        let v: f64 = rng.gen();
        if v * majorant >= exit {
            continue;
        }
        let pick = rng.gen::<f64>() * exit;
        let mut acc = 0.0;
        let mut next = row.off.last().map(|&(j, _)| j).unwrap_or(state);
        for &(j, q) in &row.off {
            acc += q;
            if pick < acc {
                next = j;
                break;
            }
        }
        state = next;
        path.epochs.push(t);
        path.states.push(state);
        path.actions.push(draw_action(policy, state, t, rng));
    }
    path
}

/// One path from `i0` using stream 0 of `seed`.
pub fn simulate(
    model: &CtmdpModel,
    policy: &MarkovPolicy,
    i0: usize,
    seed: u64,
) -> Result<Trajectory, SimError> {
    check_inputs(model, policy, i0)?;
    Ok(draw_path(model, policy, i0, &mut replicate_rng(seed, 0)))
}

fn per_replicate<F>(
    model: &CtmdpModel,
    policy: &MarkovPolicy,
    i0: usize,
    replicates: usize,
    seed: u64,
    sample: F,
) -> Vec<f64>
where
    F: Fn(&Trajectory) -> f64 + Sync,
{
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| sample(&draw_path(model, policy, i0, &mut replicate_rng(seed, r))))
        .collect()
}

/// Estimates `E_i0[int_0^T sum_a c_n(xi_t, a) phi(a | xi_t, t) dt]`.
pub fn mc_value(
    model: &CtmdpModel,
    policy: &MarkovPolicy,
    i0: usize,
    cost_index: usize,
    replicates: usize,
    seed: u64,
) -> Result<McEstimate, SimError> {
    check_inputs(model, policy, i0)?;
    if replicates < 2 {
        return Err(SimError::Replicates(replicates));
    }
    if cost_index >= model.n_costs() {
        return Err(SimError::CostIndex {
            index: cost_index,
            n_costs: model.n_costs(),
        });
    }
    let cost = CellIntegrator::new(model, policy, |i, a| model.cost(cost_index, i, a));
    let horizon = model.horizon();
    let samples = per_replicate(model, policy, i0, replicates, seed, |p| {
        cost.along(p, horizon)
    });
    Ok(McEstimate::from_samples(&samples))
}

/// Both sides of `P(xi_t in B) = I{i0 in B} + E int_0^t q(B | xi_u, a_u) du`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardCheck {
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    /// Paired difference `lhs - rhs`, sample by sample.
    pub residual: McEstimate,
}

impl ForwardCheck {
    pub fn covers_zero(&self, z: f64) -> bool {
        self.residual.covers(0.0, z)
    }
}

/// `q(B | i, a)`, written so that `B = S` gives exactly zero.
fn rate_into(model: &CtmdpModel, in_set: &[bool], i: usize, a: usize) -> f64 {
    let row = model.rate_row(i, a);
    if in_set[i] {
        -row.off
            .iter()
            .filter(|&&(j, _)| !in_set[j])
            .map(|&(_, q)| q)
            .sum::<f64>()
    } else {
        row.off
            .iter()
            .filter(|&&(j, _)| in_set[j])
            .map(|&(_, q)| q)
            .sum::<f64>()
    }
}

pub fn check_forward_kolmogorov(
    model: &CtmdpModel,
    policy: &MarkovPolicy,
    i0: usize,
    subset: &[usize],
    t: f64,
    replicates: usize,
    seed: u64,
) -> Result<ForwardCheck, SimError> {
    check_inputs(model, policy, i0)?;
    if replicates < 2 {
        return Err(SimError::Replicates(replicates));
    }
    let horizon = model.horizon();
    if !(t > 0.0 && t <= horizon) {
        return Err(SimError::Time { t, horizon });
    }
    let mut in_set = vec![false; model.n_states()];
    for &j in subset {
        *in_set.get_mut(j).ok_or(SimError::Subset(j))? = true;
    }
    let flow = CellIntegrator::new(model, policy, |i, a| rate_into(model, &in_set, i, a));
    let start = if in_set[i0] { 1.0 } else { 0.0 };
    let pairs: Vec<(f64, f64)> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let path = draw_path(model, policy, i0, &mut replicate_rng(seed, r));
            let hit = if in_set[path.state_at(t)] { 1.0 } else { 0.0 };
            (hit, start + flow.along(&path, t))
        })
        .collect();
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(ForwardCheck {
        lhs: McEstimate::from_samples(&lhs),
        rhs: McEstimate::from_samples(&rhs),
        residual: McEstimate::from_samples(&diff),
    })
}

/// `E[w(xi_t)]` against its moment bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightBoundCheck {
    pub estimate: McEstimate,
    pub bound: f64,
    /// `estimate.mean - bound`.
    pub slack: f64,
}

impl WeightBoundCheck {
    /// The bound is statistically exceeded: slack above `4 se`.
    pub fn violated(&self) -> bool {
        self.slack > 4.0 * self.estimate.std_error
    }
}

/// `t = 0` is allowed here: both sides equal `w(i0)`.
pub fn check_weight_bound(
    model: &CtmdpModel,
    constants: &DriftConstants,
    policy: &MarkovPolicy,
    i0: usize,
    t: f64,
    replicates: usize,
    seed: u64,
) -> Result<WeightBoundCheck, SimError> {
    check_inputs(model, policy, i0)?;
    if replicates < 2 {
        return Err(SimError::Replicates(replicates));
    }
    let horizon = model.horizon();
    if !(t >= 0.0 && t <= horizon) {
        return Err(SimError::Time { t, horizon });
    }
    let cert = certify_drift(model, constants);
    if !cert.weight_drift.satisfied {
        return Err(SimError::Certificate(format!(
            "first-moment drift slack {} at {:?}",
            cert.weight_drift.worst_slack, cert.weight_drift.worst_at
        )));
    }
    let samples = per_replicate(model, policy, i0, replicates, seed, |p| {
        model.weight(p.state_at(t))
    });
    let estimate = McEstimate::from_samples(&samples);
    let bound = constants.weight_moment_bound(model.weight(i0), t);
    Ok(WeightBoundCheck {
        estimate,
        bound,
        slack: estimate.mean - bound,
    })
}
