//! Run configuration files for the `level` command (TOML or JSON).
//!
//! ```toml
//! [kernel]
//! values = [1.0, 0.9, 0.85]
//! fractions = [0.25, 0.75]
//!
//! [collocation]
//! degree = 8
//! expansion_point = "midpoint"
//!
//! [dsa]            # presence enables stochastic degree selection
//! seed = 42
//!
//! [level]
//! target = 3000.0
//! probe_index = 7
//!
//! [io]
//! input = "load.csv"
//! output = "strategy.csv"
//! report = "cestac.csv"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collocation::{ExpansionPoint, MAX_DEGREE, MIN_QUADRATURE_ORDER};
use crate::dsa::DsaConfig;
use crate::kernel::KernelSpec;
use crate::load_leveling::{ProbeHorizon, DEFAULT_LEVEL_DEGREE, DEFAULT_PROBE_INDEX};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Syntax { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollocationSection {
    pub degree: usize,
    pub expansion_point: ExpansionPoint,
    pub min_quadrature_order: usize,
}

impl Default for CollocationSection {
    fn default() -> Self {
        Self {
            degree: DEFAULT_LEVEL_DEGREE,
            expansion_point: ExpansionPoint::Midpoint,
            min_quadrature_order: MIN_QUADRATURE_ORDER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelSection {
    pub target: Option<f64>,
    pub probe_index: usize,
    pub probe_horizon: ProbeHorizon,
    pub min_degree: usize,
    pub max_degree: usize,
}

impl Default for LevelSection {
    fn default() -> Self {
        Self {
            target: None,
            probe_index: DEFAULT_PROBE_INDEX,
            probe_horizon: ProbeHorizon::default(),
            min_degree: crate::accuracy::DEFAULT_MIN_DEGREE,
            max_degree: MAX_DEGREE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub collocation: CollocationSection,
    pub dsa: Option<DsaConfig>,
    pub level: LevelSection,
    pub io: IoSection,
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let syntax = |message: String| ConfigError::Syntax {
            path: path.display().to_string(),
            message,
        };
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| syntax(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| syntax(e.to_string()))?
        };
        Ok(cfg)
    }

    /// Checks every field that can be checked without data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.kernel
            .build()
            .map_err(|e| invalid("kernel", e.to_string()))?;
        let c = &self.collocation;
        if c.degree > MAX_DEGREE {
            return Err(invalid(
                "collocation.degree",
                format!("{} exceeds the maximum {MAX_DEGREE}", c.degree),
            ));
        }
        if let ExpansionPoint::At(x) = c.expansion_point {
            if !x.is_finite() {
                return Err(invalid("collocation.expansion_point", "must be finite"));
            }
        }
        if c.min_quadrature_order == 0 {
            return Err(invalid("collocation.min_quadrature_order", "must be positive"));
        }
        if let Some(d) = &self.dsa {
            if d.samples < 2 {
                return Err(invalid("dsa.samples", format!("need at least 2, got {}", d.samples)));
            }
            if !(d.tau_delta > 0.0 && d.tau_delta.is_finite()) {
                return Err(invalid("dsa.tau_delta", format!("must be positive, got {}", d.tau_delta)));
            }
        }
        let l = &self.level;
        if let Some(t) = l.target {
            if !t.is_finite() {
                return Err(invalid("level.target", "must be finite"));
            }
        }
        if l.max_degree > MAX_DEGREE {
            return Err(invalid(
                "level.max_degree",
                format!("{} exceeds the maximum {MAX_DEGREE}", l.max_degree),
            ));
        }
        if l.max_degree <= l.min_degree {
            return Err(invalid(
                "level.max_degree",
                format!("must exceed level.min_degree ({})", l.min_degree),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            [kernel]
            values = [1.0, 0.9, 0.85]
            fractions = [0.25, 0.75]
            [collocation]
            degree = 6
            expansion_point = 4.0
            [dsa]
            seed = 9
            [level]
            target = 3000.0
            probe_horizon = "full"
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.collocation.degree, 6);
        assert_eq!(cfg.collocation.expansion_point, ExpansionPoint::At(4.0));
        assert_eq!(cfg.dsa.unwrap().seed, 9);
        assert_eq!(cfg.dsa.unwrap().samples, 3);
        assert_eq!(cfg.level.probe_horizon, ProbeHorizon::Full);
        cfg.validate().unwrap();
        let again: RunConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn json_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"collocation": {"degree": 5}, "level": {"target": 2900}}"#).unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.collocation.degree, 5);
        assert_eq!(cfg.level.target, Some(2900.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[collocation]\ndgree = 3\n").is_err());
    }

    #[test]
    fn invalid_fields_name_their_path() {
        let mut cfg = RunConfig::default();
        cfg.collocation.degree = 30;
        assert!(cfg.validate().unwrap_err().to_string().starts_with("collocation.degree:"));

        let mut cfg = RunConfig::default();
        cfg.dsa = Some(DsaConfig {
            samples: 1,
            ..DsaConfig::default()
        });
        assert!(cfg.validate().unwrap_err().to_string().starts_with("dsa.samples:"));

        let mut cfg = RunConfig::default();
        cfg.kernel.fractions = vec![0.8, 0.2];
        assert!(cfg.validate().unwrap_err().to_string().starts_with("kernel:"));
    }
}
