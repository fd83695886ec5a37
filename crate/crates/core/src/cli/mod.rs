//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when a check fails or the problem is infeasible,
//! 2 on usage, parse or I/O errors. Every subcommand writes `report.txt`
//! (`key=value` lines) into the output directory and prints the same entries
//! as an aligned table.

mod commands;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use report::Report;

#[derive(Debug, Parser)]
#[command(
    name = "ctmdp",
    version,
    about = "Finite-horizon continuous-time MDP toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check model structure and the drift certificate.
    Validate(CommonArgs),
    /// Solve the unconstrained problem and write value/policy tables.
    Solve(CommonArgs),
    /// Solve the constrained problem and its Lagrangian dual.
    Constrain(ConstrainArgs),
    /// Monte Carlo estimates and simulation checks.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    BirthDeath,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// JSON model file.
    #[arg(long, conflicts_with = "preset")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    pub mu: f64,
    /// Truncation level: states 0..m.
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    /// Grid points per control axis.
    #[arg(long, default_value_t = 3)]
    pub agrid: usize,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub initial_state: usize,
    /// Constraint bound `n=value` (n >= 1, repeatable). With the preset,
    /// `1=value` adds the control-effort cost as constraint 1.
    #[arg(long = "d", value_parser = parse_bound)]
    pub bounds: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Time steps on [0, T].
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Relative slack for the value envelope.
    #[arg(long, default_value_t = crate::dp::ENVELOPE_SLACK)]
    pub envelope_slack: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ConstrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Largest accepted |primal - dual|.
    #[arg(long, default_value_t = 1e-3)]
    pub gap_tol: f64,
    /// Allowed violation of the dual inequality, relative to w^2.
    #[arg(long, default_value_t = crate::occupation::DUAL_FEASIBILITY_TOL)]
    pub dual_tol: f64,
    /// Budget of dual-function evaluations.
    #[arg(long, default_value_t = 2000)]
    pub dual_evals: usize,
    /// Time blocks in the indicator test functions.
    #[arg(long, default_value_t = 4)]
    pub test_blocks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    /// The minimizing policy of the unconstrained problem.
    Optimal,
    /// Uniform over actions everywhere.
    Uniform,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start state (default: the first state with positive initial mass).
    #[arg(long)]
    pub state: Option<usize>,
    /// Comma-separated target set for the forward-equation check.
    #[arg(long, value_delimiter = ',')]
    pub subset: Option<Vec<usize>>,
    /// Check time (default: the horizon).
    #[arg(long)]
    pub time: Option<f64>,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Optimal)]
    pub policy: PolicyChoice,
    /// Confidence half-width in standard errors.
    #[arg(long, default_value_t = 4.0)]
    pub z: f64,
}

fn parse_bound(s: &str) -> Result<(usize, f64), String> {
    let (n, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected n=value, got {s:?}"))?;
    let n: usize = n
        .trim()
        .parse()
        .map_err(|e| format!("bad constraint index {n:?}: {e}"))?;
    if n == 0 {
        return Err("constraint indices start at 1".into());
    }
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|e| format!("bad bound {v:?}: {e}"))?;
    if !v.is_finite() {
        return Err(format!("bound must be finite, got {v}"));
    }
    Ok((n, v))
}

/// A failed run, with its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Usage(anyhow::Error),
    /// Exit 1.
    Domain(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Domain(_) => 1,
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Usage(e) | Failure::Domain(e) => eprintln!("error: {e:#}"),
            }
            f.code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Constrain(a) => commands::constrain(a),
        Command::Simulate(a) => commands::simulate(a),
    }
}
