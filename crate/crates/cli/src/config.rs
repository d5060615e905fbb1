//! Experiment configuration: JSON file plus `--set key=value` overrides.

use std::path::Path;

use kvwave_core::carleman::{Sampling, WeightSpec};
use kvwave_core::evolution::Scheme;
use kvwave_core::geometry::OmegaDescriptor;
use kvwave_core::resolvent::ResolventMethod;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Spectrum,
    Resolvent,
    Decay,
    TransmissionCheck,
    CarlemanCheck,
    HelmholtzCheck,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Spectrum => "spectrum",
            Kind::Resolvent => "resolvent",
            Kind::Decay => "decay",
            Kind::TransmissionCheck => "transmission-check",
            Kind::CarlemanCheck => "carleman-check",
            Kind::HelmholtzCheck => "helmholtz-check",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_cells: usize,
    /// `interval` and `whole` give a 1D mesh of (0,1), `rectangle` a 2D mesh of (0,1)².
    pub omega: OmegaDescriptor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingConfig {
    pub d: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

/// Numerical parameters. Which ones are required depends on the kind.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub scheme: Option<Scheme>,
    pub k: Option<usize>,
    pub csv_stride: Option<usize>,
    pub mu_grid: Option<GridConfig>,
    pub mus: Option<Vec<f64>>,
    pub method: Option<ResolventMethod>,
    pub band_j_max: Option<u32>,
    pub n_cases: Option<usize>,
    pub mu_range: Option<[f64; 2]>,
    pub dissipation_mus: Option<Vec<f64>>,
    pub n_rhs: Option<usize>,
    pub cells: Option<Vec<usize>>,
    pub trials: Option<usize>,
    /// Tolerance of the kind's primary check; each kind has a default.
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanConfig {
    /// Name of a catalog weight; ignored when `weight` is given.
    pub catalog: Option<String>,
    pub weight: Option<WeightSpec>,
    pub sampling: Option<Sampling>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; must agree with the subcommand when present.
    pub kind: Option<Kind>,
    #[serde(default)]
    pub seed: u64,
    pub geometry: Option<GeometryConfig>,
    pub damping: Option<DampingConfig>,
    #[serde(default)]
    pub numerics: Numerics,
    pub carleman: Option<CarlemanConfig>,
    pub out: Option<String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Applies `a.b.c=value`; the value is parsed as JSON and kept as a string
/// otherwise.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects key=value, got `{spec}`")))?;
    if key.is_empty() {
        return Err(config_err("--set key is empty"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            config_err(format!(
                "--set {key}: `{}` is not an object",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

/// Reads, overrides and parses; returns the typed config and the merged JSON.
pub fn load(
    path: &Path,
    overrides: &[String],
    kind: Kind,
) -> Result<(ExperimentConfig, Value), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("{}: invalid JSON: {e}", path.display())))?;
    if !value.is_object() {
        return Err(config_err(format!(
            "{}: top level must be an object",
            path.display()
        )));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value.clone())
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if let Some(k) = cfg.kind {
        if k != kind {
            return Err(config_err(format!(
                "config is for `{}` but the command is `{}`",
                k.as_str(),
                kind.as_str()
            )));
        }
    }
    cfg.validate(kind)?;
    Ok((cfg, value))
}

/// `Some(v)` or a diagnostic naming the missing field.
pub fn require<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| config_err(format!("missing field `{name}`")))
}

impl ExperimentConfig {
    pub fn validate(&self, kind: Kind) -> Result<(), CliError> {
        let n = &self.numerics;
        if let Some(t) = n.tol {
            if !(t > 0.0) {
                return Err(config_err(format!(
                    "numerics.tol must be positive, got {t}"
                )));
            }
        }
        if kind != Kind::CarlemanCheck {
            require(&self.geometry, "geometry")?;
            require(&self.damping, "damping")?;
        }
        match kind {
            Kind::Simulate | Kind::Decay => {
                require(&n.dt, "numerics.dt")?;
                require(&n.t_final, "numerics.t_final")?;
                if kind == Kind::Decay {
                    require(&n.k, "numerics.k")?;
                }
            }
            Kind::Spectrum => {}
            Kind::Resolvent => {
                if n.mu_grid.is_none() && n.mus.is_none() {
                    return Err(config_err(
                        "missing field `numerics.mu_grid` (or `numerics.mus`)",
                    ));
                }
            }
            Kind::TransmissionCheck => {
                require(&n.mu_range, "numerics.mu_range")?;
            }
            Kind::HelmholtzCheck => {
                require(&n.cells, "numerics.cells")?;
                require(&n.mus, "numerics.mus")?;
            }
            Kind::CarlemanCheck => {
                let c = require(&self.carleman, "carleman")?;
                if c.catalog.is_none() && c.weight.is_none() {
                    return Err(config_err(
                        "missing field `carleman.weight` (or `carleman.catalog`)",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_create_nested_keys() {
        let mut v = json!({"numerics": {"dt": 0.1}});
        apply_override(&mut v, "numerics.dt=0.01").unwrap();
        apply_override(&mut v, "damping.d=2").unwrap();
        apply_override(&mut v, "numerics.scheme=backward_euler").unwrap();
        assert_eq!(v["numerics"]["dt"], json!(0.01));
        assert_eq!(v["damping"]["d"], json!(2));
        assert_eq!(v["numerics"]["scheme"], json!("backward_euler"));
        assert!(apply_override(&mut v, "nokey").is_err());
        assert!(apply_override(&mut v, "numerics.dt.x=1").is_err());
    }

    #[test]
    fn missing_kind_fields_are_named() {
        let cfg: ExperimentConfig = serde_json::from_value(json!({
            "geometry": {"n_cells": 20, "omega": {"shape": "interval", "a": 0.3, "b": 0.7}},
            "damping": {"d": 1.0},
            "numerics": {"dt": 0.01}
        }))
        .unwrap();
        let err = cfg.validate(Kind::Simulate).unwrap_err().to_string();
        assert!(err.contains("numerics.t_final"), "{err}");
        assert!(cfg.validate(Kind::Spectrum).is_ok());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: Result<ExperimentConfig, _> =
            serde_json::from_value(json!({"numerics": {"dtt": 1}}));
        assert!(r.unwrap_err().to_string().contains("dtt"));
    }
}
