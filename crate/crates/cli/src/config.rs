//! Run configuration: TOML with dotted keys, SI units.
//!
//! ```toml
//! seed = 42
//! field.kappa = 351.5625
//! field.h = 0.05
//! field.b0 = 2.985
//! field.b_prime = 0.357
//! body.mass = 0.00683
//! body.moment = 0.18
//! body.i_perp = 1.0e-7
//! body.i_axial = 1.6e-7
//! orbit.r0 = 0.06
//! ```
//!
//! Values are resolved as command-line override, then file, then default.

use std::path::{Path, PathBuf};

use orbitron::dynamics::{IntegratorConfig, Method, SheafConfig};
use orbitron::equilibrium::{BodyParams, EquilibriumError, EquilibriumProblem, STANDARD_GRAVITY};
use orbitron::fields::{FieldError, FieldModel, LinearFieldParams, OrbitronParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disk::{derive_body_from_disk, DiskGeometry};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("override `{key}`: {reason}")]
    Override { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub kappa: f64,
    pub h: f64,
    pub b0: f64,
    pub b_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySection {
    pub mass: f64,
    pub moment: f64,
    pub i_perp: f64,
    pub i_axial: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSection {
    pub r0: f64,
    #[serde(default = "default_g")]
    pub g: f64,
}

fn default_g() -> f64 {
    STANDARD_GRAVITY
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Rk4,
    DormandPrince,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub method: MethodName,
    /// Fixed steps per orbital period for the fourth-order scheme.
    pub steps_per_turn: usize,
    pub rtol: f64,
    pub atol: f64,
    pub renormalize_mu: bool,
    pub stride: usize,
    pub turns: f64,
    /// Relative perturbation of the initial state for `simulate`.
    pub perturbation: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            method: MethodName::Rk4,
            steps_per_turn: 2000,
            rtol: 1e-10,
            atol: 1e-13,
            renormalize_mu: false,
            stride: 1,
            turns: 10.0,
            perturbation: 0.0,
        }
    }
}

impl IntegratorSection {
    pub fn to_config(&self, period: f64) -> IntegratorConfig {
        let method = match self.method {
            MethodName::Rk4 => Method::Rk4 {
                dt: period / self.steps_per_turn as f64,
            },
            MethodName::DormandPrince => Method::DormandPrince {
                rtol: self.rtol,
                atol: self.atol,
            },
        };
        IntegratorConfig {
            method,
            renormalize_mu: self.renormalize_mu,
            stride: self.stride,
            max_time: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SheafSection {
    pub samples: usize,
    pub rel_perturbation: f64,
    pub turns: f64,
    pub steps_per_turn: usize,
    pub max_radial_fraction: f64,
    pub max_z_fraction: f64,
    pub pole_clearance: f64,
    pub escape_radius: f64,
}

impl Default for SheafSection {
    fn default() -> Self {
        let d = SheafConfig::default();
        Self {
            samples: d.n_samples,
            rel_perturbation: d.rel_perturbation,
            turns: d.n_turns,
            steps_per_turn: d.steps_per_turn,
            max_radial_fraction: d.max_radial_fraction,
            max_z_fraction: d.max_z_fraction,
            pole_clearance: d.pole_clearance,
            escape_radius: d.escape_radius,
        }
    }
}

impl SheafSection {
    pub fn to_config(&self, seed: u64) -> SheafConfig {
        SheafConfig {
            n_samples: self.samples,
            rel_perturbation: self.rel_perturbation,
            n_turns: self.turns,
            seed,
            steps_per_turn: self.steps_per_turn,
            max_radial_fraction: self.max_radial_fraction,
            max_z_fraction: self.max_z_fraction,
            pole_clearance: self.pole_clearance,
            escape_radius: self.escape_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Published values to compare a run against. All optional.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSection {
    pub alpha: Option<f64>,
    pub b1: Option<f64>,
    pub b3: Option<f64>,
    pub xi1: Option<f64>,
    pub xi2_tilde: Option<f64>,
    pub nu1: Option<f64>,
    pub nu3: Option<f64>,
    pub pi1: Option<f64>,
    pub pi3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub field: FieldSection,
    #[serde(default)]
    pub body: Option<BodySection>,
    #[serde(default)]
    pub disk: Option<DiskGeometry>,
    pub orbit: OrbitSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub sheaf: SheafSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub reference: Option<ReferenceSection>,
}

/// Splits `key=value`; the value is read as a TOML literal, falling back to a
/// bare string.
pub fn parse_override(raw: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::Override {
        key: raw.to_string(),
        reason: "expected key=value".into(),
    })?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

/// Sets a dotted key, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::Override {
        key: key.to_string(),
        reason: "empty key".into(),
    })?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override {
            key: key.to_string(),
            reason: format!("`{part}` is not a table"),
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path, overrides: &[(String, toml::Value)]) -> Result<Self, ConfigError> {
        let parse_err = |e: toml::de::Error| ConfigError::Parse {
            path: origin.to_path_buf(),
            source: Box::new(e),
        };
        let mut table: toml::Table = toml::from_str(text).map_err(parse_err)?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v.clone())?;
        }
        let cfg: RunConfig = table.try_into().map_err(parse_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, toml::Value)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.body, &self.disk) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(ConfigError::Invalid(
                    "exactly one of [body] or [disk] must be given".into(),
                ))
            }
        }
        if self.integrator.steps_per_turn == 0 || self.sheaf.steps_per_turn == 0 {
            return Err(ConfigError::Invalid("steps_per_turn must be at least 1".into()));
        }
        if !(self.integrator.turns > 0.0) {
            return Err(ConfigError::Invalid("integrator.turns must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.integrator.perturbation) {
            return Err(ConfigError::Invalid("integrator.perturbation must lie in [0, 1)".into()));
        }
        self.sheaf
            .to_config(self.seed)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.problem()?;
        Ok(())
    }

    pub fn field_model(&self) -> Result<FieldModel, ConfigError> {
        let f = &self.field;
        Ok(FieldModel::new(
            OrbitronParams::new(f.kappa, f.h)?,
            LinearFieldParams::new(f.b0, f.b_prime)?,
        ))
    }

    pub fn body(&self) -> Result<BodyParams, ConfigError> {
        match (&self.body, &self.disk) {
            (Some(b), None) => Ok(BodyParams::new(b.mass, b.moment, b.i_perp, b.i_axial)?),
            (None, Some(d)) => Ok(derive_body_from_disk(d)?.body),
            _ => Err(ConfigError::Invalid("exactly one of [body] or [disk] must be given".into())),
        }
    }

    pub fn problem(&self) -> Result<EquilibriumProblem, ConfigError> {
        Ok(EquilibriumProblem::new(
            self.field_model()?,
            self.body()?,
            self.orbit.r0,
            self.orbit.g,
        )?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
