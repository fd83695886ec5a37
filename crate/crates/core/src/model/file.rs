//! JSON model files.
//!
//! Two layouts are accepted. A dense model lists every table explicitly:
//!
//! ```json
//! {
//!   "states": 2,
//!   "actions": [[[0.0]], [[0.0]]],
//!   "rates": [[[-1.0, 1.0]], [[1.0, -1.0]]],
//!   "costs": [[[0.0], [1.0]]],
//!   "constraint_bounds": [],
//!   "horizon": 1.0,
//!   "initial_dist": [1.0, 0.0],
//!   "weight": [1.0, 2.0]
//! }
//! ```
//!
//! `rates[i][a][j]` is `q(j|i,a)` and `costs[n][i][a]` is `c_n(i,a)`. Optional
//! keys: `truncation_level` (defaults to `max w`) and `certificate`, a block of
//! drift constants `{rho1, b1, rho2, b2, rho3, b3, L, M}`.
//!
//! A preset file describes the controlled birth-death system instead:
//!
//! ```json
//! {
//!   "preset": {
//!     "birth_death": {
//!       "lambda": 1.0, "mu": 2.0, "m": 10, "grid": 3, "horizon": 1.0,
//!       "costs": [{"state": 1.0}, {"busy": 0.5, "a2": 0.25}],
//!       "constraint_bounds": [0.4],
//!       "initial_state": 0
//!     }
//!   }
//! }
//! ```
//!
//! Each cost entry is a [`LinearCost`]; omitted coefficients are zero. The
//! initial law is either `initial_state` or an explicit `initial_dist`
//! (default: state 0). Unknown keys are rejected everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BirthDeath, CtmdpModel, DriftConstants, LinearCost, ModelError, ModelParts};

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A parsed model plus the optional data that travels with it.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: CtmdpModel,
    pub certificate: Option<DriftConstants>,
    pub preset: Option<BirthDeath>,
}

impl LoadedModel {
    /// The certificate to check: the file's own, the preset's proved constants,
    /// or constants fitted to the model, in that order.
    pub fn certificate_or_default(&self) -> DriftConstants {
        if let Some(c) = self.certificate {
            return c;
        }
        match &self.preset {
            Some(bd) => DriftConstants::birth_death(bd.lambda, bd.mu, bd.cost_bound()),
            None => DriftConstants::fit(&self.model),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseFile {
    states: usize,
    actions: Vec<Vec<Vec<f64>>>,
    rates: Vec<Vec<Vec<f64>>>,
    costs: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    constraint_bounds: Vec<f64>,
    horizon: f64,
    initial_dist: Vec<f64>,
    weight: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truncation_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    certificate: Option<DriftConstants>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    preset: PresetBlock,
    #[serde(default)]
    certificate: Option<DriftConstants>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetBlock {
    birth_death: BirthDeathBlock,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BirthDeathBlock {
    lambda: f64,
    mu: f64,
    m: usize,
    grid: usize,
    #[serde(default = "default_costs")]
    costs: Vec<LinearCost>,
    #[serde(default)]
    constraint_bounds: Vec<f64>,
    #[serde(default = "default_horizon")]
    horizon: f64,
    #[serde(default)]
    initial_state: Option<usize>,
    #[serde(default)]
    initial_dist: Option<Vec<f64>>,
}

fn default_costs() -> Vec<LinearCost> {
    vec![LinearCost::holding()]
}

fn default_horizon() -> f64 {
    1.0
}

pub fn parse_model(text: &str) -> Result<LoadedModel, ModelFileError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let is_preset = value.as_object().is_some_and(|o| o.contains_key("preset"));
    if is_preset {
        let file: PresetFile = serde_json::from_value(value)?;
        let b = file.preset.birth_death;
        let mut spec = BirthDeath::new(b.lambda, b.mu, b.m, b.grid)
            .with_costs(b.costs, b.constraint_bounds)
            .with_horizon(b.horizon);
        match (b.initial_state, b.initial_dist) {
            (Some(_), Some(_)) => {
                return Err(ModelFileError::Schema(
                    "give either initial_state or initial_dist, not both".into(),
                ))
            }
            (Some(s), None) => {
                if s >= b.m {
                    return Err(ModelFileError::Schema(format!(
                        "initial_state {s} outside 0..{}",
                        b.m
                    )));
                }
                spec = spec.starting_at(s);
            }
            (None, Some(dist)) => spec.initial_dist = dist,
            (None, None) => {}
        }
        let model = spec.build()?;
        Ok(LoadedModel {
            model,
            certificate: file.certificate,
            preset: Some(spec),
        })
    } else {
        let file: DenseFile = serde_json::from_value(value)?;
        if file.actions.len() != file.states {
            return Err(ModelFileError::Schema(format!(
                "states = {} but {} action lists given",
                file.states,
                file.actions.len()
            )));
        }
        let model = CtmdpModel::new(ModelParts {
            actions: file.actions,
            rates: file.rates,
            costs: file.costs,
            constraint_bounds: file.constraint_bounds,
            horizon: file.horizon,
            initial_dist: file.initial_dist,
            weight: file.weight,
            truncation_level: file.truncation_level,
        })?;
        Ok(LoadedModel {
            model,
            certificate: file.certificate,
            preset: None,
        })
    }
}

pub fn load_model(path: &Path) -> Result<LoadedModel, ModelFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

impl CtmdpModel {
    /// Dense JSON rendering readable by [`parse_model`].
    pub fn to_json(&self, certificate: Option<DriftConstants>) -> String {
        let parts = self.to_parts();
        let file = DenseFile {
            states: self.n_states(),
            actions: parts.actions,
            rates: parts.rates,
            costs: parts.costs,
            constraint_bounds: parts.constraint_bounds,
            horizon: parts.horizon,
            initial_dist: parts.initial_dist,
            weight: parts.weight,
            truncation_level: parts.truncation_level,
            certificate,
        };
        serde_json::to_string_pretty(&file).expect("model tables serialize")
    }
}
