//! Experiment configuration: a TOML document with `[experiment]`,
//! `[cost]`, `[init]`, `[plant]`, `[[disturbance]]` and `[reference]`
//! tables, plus the bundled `case1` / `case2` presets.
//!
//! Units: `experiment.dt` in s, plant matrices row-major in SI units
//! (`A` in 1/s), reference amplitude in m/s^2.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mrac::{ActorGains, CostWeights, CriticWeights, UpdateMode, DEFAULT_H_MIN};
use crate::plant::{Disturbance, DisturbanceSchedule, DisturbanceSegment, PlantModel, PlantState};
use crate::reference::ReferenceSpec;
use crate::ControlError;

const CASE1: &str = include_str!("../presets/case1.toml");
const CASE2: &str = include_str!("../presets/case2.toml");

/// Names of the bundled presets.
pub const PRESETS: [&str; 2] = ["case1", "case2"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unknown preset {0:?} (available: case1, case2)")]
    UnknownPreset(String),
    #[error("bad override {0:?}: expected key.path=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
}

/// Integration rule for the utility integral over one hold interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// `U(k dt) * dt`.
    #[default]
    Rectangle,
    /// Trapezoid rule over `substeps` output samples inside the interval.
    Trapezoid,
}

fn default_true() -> bool {
    true
}
fn default_substeps() -> usize {
    10
}
fn default_h_min() -> f64 {
    DEFAULT_H_MIN
}
fn default_divergence_limit() -> f64 {
    1e9
}

/// Loop parameters: `steps` is the adaptation horizon N, `dt` the sampling
/// interval, `tolerance`/`window` the convergence threshold and window width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSettings {
    pub steps: usize,
    pub dt: f64,
    pub actor_rate: f64,
    pub critic_rate: f64,
    pub tolerance: f64,
    pub window: usize,
    #[serde(default)]
    pub mode: UpdateMode,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub quadrature: Quadrature,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_h_min")]
    pub h_min: f64,
    /// Any logged magnitude above this ends the run as diverged.
    #[serde(default = "default_divergence_limit")]
    pub divergence_limit: f64,
    /// Reserved; the loop is deterministic.
    #[serde(default)]
    pub seed: u64,
}

fn identity3() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSettings {
    #[serde(default = "identity3")]
    pub q: [[f64; 3]; 3],
    #[serde(default = "one")]
    pub r: f64,
}

impl Default for CostSettings {
    fn default() -> Self {
        Self {
            q: identity3(),
            r: 1.0,
        }
    }
}

/// Initial weights. The critic defaults to the identity; the actor defaults
/// to the greedy gains of the initial critic.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic: Option<[[f64; 4]; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSettings {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSettings {
    pub start_step: usize,
    pub rho: f64,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub experiment: LoopSettings,
    #[serde(default)]
    pub cost: CostSettings,
    #[serde(default)]
    pub init: InitSettings,
    pub plant: PlantSettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbance: Vec<SegmentSettings>,
    pub reference: ReferenceSpec,
}

/// Validated, typed form of an [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub settings: LoopSettings,
    pub cost: CostWeights,
    pub critic: CriticWeights,
    pub actor: ActorGains,
    pub model: PlantModel,
    pub initial_state: PlantState,
    pub schedule: DisturbanceSchedule,
    pub reference: ReferenceSpec,
}

fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>()
        .map_err(|e| ConfigError::Parse(e.to_string()))
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `key.path = value` inside a TOML table, creating tables as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    }
    cursor.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn nonfinite(name: &str) -> ConfigError {
    ConfigError::Invalid(format!("{name} must be finite"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_table(parse_table(text)?)
    }

    fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    /// Parses `text` after applying dotted-path overrides.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = parse_table(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn preset_text(name: &str) -> Result<&'static str, ConfigError> {
        match name {
            "case1" => Ok(CASE1),
            "case2" => Ok(CASE2),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        Self::from_toml_str(Self::preset_text(name)?)
    }

    /// Reads a config file, applies overrides and loads any reference table
    /// relative to the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_with_overrides(&text, overrides)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.reference
            .resolve_table(base)
            .map_err(|e| ConfigError::Invalid(format!("reference: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every invariant and returns the typed experiment; the error
    /// names the first violated field.
    pub fn validate(&self) -> Result<Experiment, ConfigError> {
        let s = &self.experiment;
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if s.steps < 1 {
            return invalid("experiment.steps (N) must be >= 1".into());
        }
        if !s.dt.is_finite() {
            return Err(nonfinite("experiment.dt"));
        }
        if s.dt <= 0.0 {
            return invalid(format!(
                "experiment.dt (sampling step) must be > 0, got {}",
                s.dt
            ));
        }
        if !(s.actor_rate > 0.0 && s.actor_rate < 1.0) {
            return invalid(format!(
                "experiment.actor_rate (zeta_a) must satisfy 0 < zeta_a < 1, got {}",
                s.actor_rate
            ));
        }
        if !(s.critic_rate > 0.0 && s.critic_rate < 1.0) {
            return invalid(format!(
                "experiment.critic_rate (zeta_c) must satisfy 0 < zeta_c < 1, got {}",
                s.critic_rate
            ));
        }
        if !(s.tolerance > 0.0) || !s.tolerance.is_finite() {
            return invalid(format!(
                "experiment.tolerance (convergence threshold) must be > 0, got {}",
                s.tolerance
            ));
        }
        if s.window < 1 {
            return invalid("experiment.window (L) must be >= 1".into());
        }
        if s.substeps < 1 {
            return invalid("experiment.substeps must be >= 1".into());
        }
        if !(s.h_min > 0.0) || !s.h_min.is_finite() {
            return invalid(format!("experiment.h_min must be > 0, got {}", s.h_min));
        }
        if !(s.divergence_limit > 0.0) {
            return invalid("experiment.divergence_limit must be > 0".into());
        }

        let q = Matrix3::from_fn(|i, j| self.cost.q[i][j]);
        let cost = CostWeights::new(q, self.cost.r)
            .map_err(|e| ConfigError::Invalid(format!("cost: {e}")))?;

        let critic = match &self.init.critic {
            Some(rows) => CriticWeights::new(Matrix4::from_fn(|i, j| rows[i][j]), s.h_min),
            None => CriticWeights::new(Matrix4::identity(), s.h_min),
        }
        .map_err(|e| ConfigError::Invalid(format!("init.critic: {e}")))?;
        let actor = match self.init.actor {
            Some(k) => {
                if k.iter().any(|v| !v.is_finite()) {
                    return Err(nonfinite("init.actor"));
                }
                ActorGains::new(k[0], k[1], k[2])
            }
            None => crate::mrac::greedy_gains(&critic)
                .map_err(|e: ControlError| ConfigError::Invalid(format!("init.critic: {e}")))?,
        };

        let p = &self.plant;
        let model = PlantModel::from_rows(&p.a, &p.b, &p.c)
            .map_err(|e| ConfigError::Invalid(format!("plant: {e}")))?;
        let n = model.order();
        let initial_state = match &p.x0 {
            Some(x0) if x0.len() != n => {
                return invalid(format!(
                    "plant.x0 has {} entries, plant order is {n}",
                    x0.len()
                ))
            }
            Some(x0) if x0.iter().any(|v| !v.is_finite()) => return Err(nonfinite("plant.x0")),
            Some(x0) => PlantState::new(nalgebra::DVector::from_column_slice(x0)),
            None => PlantState::zeros(n),
        };

        let schedule = if self.disturbance.is_empty() {
            DisturbanceSchedule::identity(n)
        } else {
            DisturbanceSchedule::new(
                self.disturbance
                    .iter()
                    .map(|seg| DisturbanceSegment {
                        start_step: seg.start_step,
                        disturbance: Disturbance::new(seg.rho, &seg.xi),
                    })
                    .collect(),
            )
            .map_err(|e| ConfigError::Invalid(format!("disturbance: {e}")))?
        };
        schedule
            .check_order(n)
            .map_err(|e| ConfigError::Invalid(format!("disturbance: {e}")))?;

        self.reference
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("reference: {e}")))?;

        Ok(Experiment {
            settings: s.clone(),
            cost,
            critic,
            actor,
            model,
            initial_state,
            schedule,
            reference: self.reference.clone(),
        })
    }
}
