//! Finite-horizon continuous-time Markov decision processes.
//!
//! * [`model`]: instances, validation, drift certificates, the birth-death preset.
//! * [`dp`]: backward optimality equation and policy evaluation.
//! * [`sim`]: thinning simulation and Monte Carlo estimators.
//! * [`lp`]: dense two-phase simplex.
//! * [`occupation`]: occupation measures, the constrained LP and its Lagrangian dual.
//! * [`cli`]: the `ctmdp` command-line front end.

// NaN has to fail range checks, hence `!(x >= 0.0)`; the index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dp;
pub mod lp;
pub mod model;
pub mod occupation;
pub mod sim;
