use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::anyhow;

use super::{
    CommonArgs, ConstrainArgs, Failure, ModelArgs, PolicyChoice, Preset, Report, SimulateArgs,
};
use crate::dp::{
    check_envelope_with, evaluate_policy, solve_backward, truncation_error_bound, write_policy_csv,
    DpError, TimeGrid,
};
use crate::lp::LpStatus;
use crate::model::{
    certify_drift, load_model, validate_model, BirthDeath, CtmdpModel, DriftCertificate,
    LinearCost, LoadedModel, MarkovPolicy,
};
use crate::occupation::{
    check_characterization, default_test_family, lagrangian_dual_against, occupation_of_policy,
    solve_constrained, DualSearch, OccupationError, SolveMethod,
};
use crate::sim::{
    check_forward_kolmogorov, check_weight_bound, mc_value, simulate as simulate_path, SimError,
};

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn domain(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Domain(e.into())
}

fn dp_failure(e: DpError) -> Failure {
    match e {
        DpError::Grid { .. } => usage(e),
        _ => domain(e),
    }
}

fn occupation_failure(e: OccupationError) -> Failure {
    match e {
        OccupationError::Dp(e) => dp_failure(e),
        OccupationError::NoConstraints => usage(anyhow!("{e}; add a bound with --d 1=value")),
        _ => domain(e),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::State { .. }
        | SimError::Replicates(_)
        | SimError::Time { .. }
        | SimError::Subset(_) => usage(e),
        _ => domain(e),
    }
}

fn load(args: &ModelArgs) -> Result<LoadedModel, Failure> {
    match (&args.model, args.preset) {
        (Some(path), _) => {
            let loaded = load_model(path).map_err(usage)?;
            if args.bounds.is_empty() {
                return Ok(loaded);
            }
            let mut bounds = loaded.model.constraint_bounds().to_vec();
            for &(n, v) in &args.bounds {
                if n > bounds.len() {
                    return Err(usage(anyhow!(
                        "--d {n}=...: the model has {} constraint costs",
                        bounds.len()
                    )));
                }
                bounds[n - 1] = v;
            }
            let model = loaded.model.with_constraint_bounds(bounds).map_err(usage)?;
            Ok(LoadedModel { model, ..loaded })
        }
        (None, Some(Preset::BirthDeath)) => {
            if args.initial_state >= args.m {
                return Err(usage(anyhow!(
                    "--initial-state {} outside 0..{}",
                    args.initial_state,
                    args.m
                )));
            }
            let mut spec = BirthDeath::new(args.lambda, args.mu, args.m, args.agrid)
                .with_horizon(args.horizon)
                .starting_at(args.initial_state);
            if let Some(&(n, _)) = args.bounds.iter().find(|(n, _)| *n != 1) {
                return Err(usage(anyhow!(
                    "--d {n}=...: the preset has one constraint cost"
                )));
            }
            if let Some(&(_, d)) = args.bounds.last() {
                spec = spec.with_costs(
                    vec![
                        LinearCost::holding(),
                        LinearCost::effort(args.lambda, args.mu),
                    ],
                    vec![d],
                );
            }
            let model = spec.build().map_err(usage)?;
            Ok(LoadedModel {
                model,
                certificate: None,
                preset: Some(spec),
            })
        }
        (None, None) => Err(usage(anyhow!("give --model FILE or --preset birth-death"))),
    }
}

fn require_valid(model: &CtmdpModel) -> Result<(), Failure> {
    let violations = validate_model(model);
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
    Err(domain(anyhow!("invalid model:\n  {}", list.join("\n  "))))
}

fn make_grid(model: &CtmdpModel, steps: usize) -> Result<TimeGrid, Failure> {
    let grid = TimeGrid::for_model(model, steps).map_err(dp_failure)?;
    grid.check_stability(model).map_err(dp_failure)?;
    Ok(grid)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| usage(anyhow!("cannot create {}: {e}", dir.display())))
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    let path = dir.join(name);
    let io_err = |e: io::Error| usage(anyhow!("cannot write {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
    body(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn emit(dir: &Path, report: &Report) -> Result<(), Failure> {
    write_file(dir, "report.txt", |w| report.write_to(w))?;
    print!("{}", report.table());
    Ok(())
}

fn add_certificate(report: &mut Report, cert: &DriftCertificate) {
    let c = &cert.constants;
    report
        .add("rho1", c.rho1)
        .add("b1", c.b1)
        .add("rho2", c.rho2)
        .add("b2", c.b2)
        .add("rho3", c.rho3)
        .add("b3", c.b3)
        .add("L", c.rate_bound)
        .add("M", c.cost_bound);
    for (name, check) in cert.checks() {
        report.add(name, if check.satisfied { "ok" } else { "fail" });
        report.add(format!("{name}_worst_slack"), check.worst_slack);
        if let Some((i, a)) = check.worst_at {
            report.add(format!("{name}_worst_at"), format!("{i}:{a}"));
        }
    }
    report.add("certificate_ok", cert.all_satisfied());
}

/// `[1, 0, ..., 0]`: the objective cost alone.
fn objective_weights(model: &CtmdpModel) -> Vec<f64> {
    let mut w = vec![0.0; model.n_costs()];
    w[0] = 1.0;
    w
}

pub(super) fn validate(args: &CommonArgs) -> Result<(), Failure> {
    let loaded = load(&args.model)?;
    let model = &loaded.model;
    prepare_out(&args.out)?;
    let violations = validate_model(model);
    let cert = certify_drift(model, &loaded.certificate_or_default());

    let mut report = Report::new();
    report
        .add("states", model.n_states())
        .add("pairs", model.n_pairs())
        .add("constraints", model.n_constraints())
        .add("horizon", model.horizon())
        .add(
            "required_steps",
            TimeGrid::required_steps(model, model.horizon()),
        )
        .add("violations", violations.len());
    for (k, v) in violations.iter().enumerate() {
        report.add(format!("violation_{k}"), v);
    }
    add_certificate(&mut report, &cert);
    emit(&args.out, &report)?;

    if !violations.is_empty() {
        return Err(domain(anyhow!(
            "{} structural violations",
            violations.len()
        )));
    }
    if !cert.all_satisfied() {
        return Err(domain(anyhow!("drift certificate fails")));
    }
    Ok(())
}

pub(super) fn solve(args: &CommonArgs) -> Result<(), Failure> {
    let loaded = load(&args.model)?;
    let model = &loaded.model;
    require_valid(model)?;
    let grid = make_grid(model, args.steps)?;
    prepare_out(&args.out)?;

    let (values, policy) =
        solve_backward(model, grid, &objective_weights(model)).map_err(dp_failure)?;
    write_file(&args.out, "value.csv", |w| values.write_csv(w))?;
    write_file(&args.out, "policy.csv", |w| {
        write_policy_csv(model, &policy, w)
    })?;

    let constants = loaded.certificate_or_default();
    let cert = certify_drift(model, &constants);
    let envelope = check_envelope_with(model, &constants, &values, 1.0, args.envelope_slack);

    let mut report = Report::new();
    report
        .add("states", model.n_states())
        .add("steps", grid.n_steps())
        .add("dt", grid.dt())
        .add("value_initial", values.expected_initial(model))
        .add("certificate_ok", cert.all_satisfied())
        .add("envelope_worst_ratio", envelope.worst_ratio)
        .add("envelope_violations", envelope.violations.len())
        .add(
            "truncation_bound",
            truncation_error_bound(model, &constants),
        );
    emit(&args.out, &report)?;

    if !cert.all_satisfied() {
        return Err(domain(anyhow!(
            "drift certificate fails; the envelope is not certified"
        )));
    }
    if let Some(&(i, k, v, bound)) = envelope.violations.first() {
        return Err(domain(anyhow!(
            "value envelope violated at {} nodes, first at state {i}, node {k}: |{v}| > {bound}",
            envelope.violations.len()
        )));
    }
    Ok(())
}

pub(super) fn constrain(args: &ConstrainArgs) -> Result<(), Failure> {
    let common = &args.common;
    let loaded = load(&common.model)?;
    let model = &loaded.model;
    require_valid(model)?;
    if model.n_constraints() == 0 {
        return Err(occupation_failure(OccupationError::NoConstraints));
    }
    let grid = make_grid(model, common.steps)?;
    prepare_out(&common.out)?;

    let mut report = Report::new();
    report
        .add("states", model.n_states())
        .add("steps", grid.n_steps())
        .add("dt", grid.dt());
    for (n, d) in model.constraint_bounds().iter().enumerate() {
        report.add(format!("bound_{}", n + 1), d);
    }

    let solution = match solve_constrained(model, grid) {
        Ok(s) => s,
        Err(OccupationError::Status(status)) => {
            report.add("status", status.as_str());
            emit(&common.out, &report)?;
            return Err(domain(anyhow!(
                "constrained problem is {}",
                status.as_str()
            )));
        }
        Err(e) => return Err(occupation_failure(e)),
    };
    report.add("status", LpStatus::Optimal.as_str());
    match solution.method {
        SolveMethod::ColumnGeneration {
            iterations,
            columns,
        } => {
            report
                .add("method", "column_generation")
                .add("iterations", iterations)
                .add("columns", columns);
        }
        SolveMethod::Dense => {
            report
                .add("method", "dense")
                .add("pivots", solution.lp.pivots);
        }
    }
    for (n, c) in solution.costs.iter().enumerate() {
        report.add(format!("cost_{n}"), c);
    }
    for (n, u) in solution.multipliers.iter().enumerate() {
        report.add(format!("lp_multiplier_{}", n + 1), u);
    }
    let r = solution.lp.residuals;
    report
        .add("lp_primal_residual", r.primal)
        .add("lp_dual_residual", r.dual)
        .add("lp_complementarity", r.complementarity)
        .add("lp_duality_gap", r.gap);

    write_file(&common.out, "occupation.csv", |w| {
        solution.occupation.write_csv(model, w)
    })?;
    write_file(&common.out, "policy.csv", |w| {
        write_policy_csv(model, &solution.policy, w)
    })?;

    let search = DualSearch {
        max_evaluations: args.dual_evals,
        ..DualSearch::default()
    };
    let cert = lagrangian_dual_against(model, grid, search, solution.lp.objective)
        .map_err(occupation_failure)?;
    let mut text = Vec::new();
    cert.write_report(&mut text).map_err(usage)?;
    for (k, v) in Report::parse(&String::from_utf8_lossy(&text)).entries() {
        report.add(k.as_str(), v);
    }

    let tests = default_test_family(model, grid, args.test_blocks);
    let chi =
        check_characterization(model, &solution.occupation, &tests).map_err(occupation_failure)?;
    report.add("characterization_max", chi.max_residual);
    if let Some((name, _)) = chi.worst() {
        report.add("characterization_worst", name);
    }

    // Forward re-evaluation of the disintegrated policy.
    let replay = occupation_of_policy(model, grid, &solution.policy).map_err(occupation_failure)?;
    for n in 0..model.n_costs() {
        report.add(format!("policy_cost_{n}"), replay.expected_cost(model, n));
    }
    emit(&common.out, &report)?;

    if !(cert.gap.abs() <= args.gap_tol) {
        return Err(domain(anyhow!(
            "duality gap {} exceeds {}",
            cert.gap,
            args.gap_tol
        )));
    }
    if !(cert.feasibility_worst_slack >= -args.dual_tol) {
        return Err(domain(anyhow!(
            "dual inequality violated: worst slack {} below -{}",
            cert.feasibility_worst_slack,
            args.dual_tol
        )));
    }
    Ok(())
}

pub(super) fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let common = &args.common;
    let loaded = load(&common.model)?;
    let model = &loaded.model;
    require_valid(model)?;
    if args.replicates < 2 {
        return Err(sim_failure(SimError::Replicates(args.replicates)));
    }
    let i0 = match args.state {
        Some(s) => s,
        None => model
            .initial_dist()
            .iter()
            .position(|&g| g > 0.0)
            .unwrap_or(0),
    };
    let t = args.time.unwrap_or(model.horizon());
    let subset = args.subset.clone().unwrap_or_else(|| vec![i0]);
    let grid = make_grid(model, common.steps)?;
    prepare_out(&common.out)?;

    let policy = match args.policy {
        PolicyChoice::Optimal => {
            solve_backward(model, grid, &objective_weights(model))
                .map_err(dp_failure)?
                .1
        }
        PolicyChoice::Uniform => MarkovPolicy::uniform(model, grid),
    };
    let path = simulate_path(model, &policy, i0, args.seed).map_err(sim_failure)?;
    let forward =
        check_forward_kolmogorov(model, &policy, i0, &subset, t, args.replicates, args.seed)
            .map_err(sim_failure)?;
    write_file(&common.out, "trajectory.csv", |w| path.write_csv(model, w))?;

    let estimate =
        mc_value(model, &policy, i0, 0, args.replicates, args.seed).map_err(sim_failure)?;
    let exact = evaluate_policy(model, grid, &policy, 0)
        .map_err(dp_failure)?
        .value(i0, 0);
    let value_ok = estimate.covers(exact, args.z);

    let constants = loaded.certificate_or_default();
    let cert = certify_drift(model, &constants);
    let bound = if cert.weight_drift.satisfied {
        Some(
            check_weight_bound(
                model,
                &constants,
                &policy,
                i0,
                t,
                args.replicates,
                args.seed,
            )
            .map_err(sim_failure)?,
        )
    } else {
        None
    };

    let subset_text: Vec<String> = subset.iter().map(|s| s.to_string()).collect();
    let mut report = Report::new();
    report
        .add(
            "policy",
            if args.policy == PolicyChoice::Optimal {
                "optimal"
            } else {
                "uniform"
            },
        )
        .add("state", i0)
        .add("replicates", args.replicates)
        .add("seed", args.seed)
        .add("steps", grid.n_steps())
        .add("trajectory_jumps", path.n_jumps())
        .add("mc_value", estimate.mean)
        .add("mc_std_error", estimate.std_error)
        .add("dp_value", exact)
        .add("mc_covers_dp", value_ok)
        .add("forward_time", t)
        .add("forward_subset", subset_text.join(","))
        .add("forward_lhs", forward.lhs.mean)
        .add("forward_rhs", forward.rhs.mean)
        .add("forward_residual", forward.residual.mean)
        .add("forward_std_error", forward.residual.std_error)
        .add("forward_covers_zero", forward.covers_zero(args.z));
    match &bound {
        Some(b) => {
            report
                .add("weight_moment", b.estimate.mean)
                .add("weight_moment_std_error", b.estimate.std_error)
                .add("weight_bound", b.bound)
                .add("weight_bound_slack", b.slack)
                .add("weight_bound_violated", b.violated());
        }
        None => {
            report.add("weight_bound", "skipped: drift certificate fails");
        }
    }
    emit(&common.out, &report)?;

    if !value_ok {
        return Err(domain(anyhow!(
            "Monte Carlo value {} +- {} misses the dynamic-programming value {exact}",
            estimate.mean,
            estimate.std_error
        )));
    }
    if !forward.covers_zero(args.z) {
        return Err(domain(anyhow!(
            "forward-equation residual {} is {:.1} standard errors from zero",
            forward.residual.mean,
            forward.residual.mean.abs() / forward.residual.std_error
        )));
    }
    if bound.as_ref().is_some_and(|b| b.violated()) {
        return Err(domain(anyhow!("weight moment exceeds its bound")));
    }
    Ok(())
}
