//! Experiment configuration: JSON file plus command-line overrides.

use std::path::PathBuf;

use ehaloha::model::DEFAULT_Q_CEILING;
use ehaloha::stability::Lyapunov;
use ehaloha::{ArrivalLaw, HarvestPolicy, ModelParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{parse_grid, GridError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("config grid {field}: {source}")]
    Grid {
        field: &'static str,
        #[source]
        source: GridError,
    },
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Sweep,
    AuxVerify,
    Lemma1Verify,
    Drift,
    Remark3,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::AuxVerify => "aux-verify",
            Command::Lemma1Verify => "lemma1-verify",
            Command::Drift => "drift",
            Command::Remark3 => "remark3",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// `reciprocal`, `power:<alpha>` or `constant:<mu>`.
pub fn parse_harvest_policy(s: &str) -> Result<HarvestPolicy, ConfigError> {
    let s = s.trim();
    let num = |v: &str| -> Result<f64, ConfigError> {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ConfigError::Invalid(format!("bad harvest parameter {v:?}")))
    };
    match s.split_once(':') {
        None if s.eq_ignore_ascii_case("reciprocal") => Ok(HarvestPolicy::Reciprocal),
        Some((kind, v)) if kind.eq_ignore_ascii_case("power") => {
            Ok(HarvestPolicy::PowerLaw { alpha: num(v)? })
        }
        Some((kind, v)) if kind.eq_ignore_ascii_case("constant") => {
            Ok(HarvestPolicy::Constant { mu: num(v)? })
        }
        _ => Err(ConfigError::Invalid(format!(
            "harvest policy {s:?}: expected reciprocal, power:<alpha> or constant:<mu>"
        ))),
    }
}

/// Every knob of every command. Unused fields are ignored by commands that do not need them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub command: Command,
    pub seed: u64,

    pub lambda: f64,
    pub p: f64,
    pub c: f64,
    pub arrival_law: ArrivalLaw,
    pub harvest_policy: HarvestPolicy,

    pub horizon: u64,
    pub burn_in: u64,
    pub replications: u64,
    pub stride: u64,
    pub q_ceiling: u64,
    pub initial_q: u64,
    pub initial_v: u64,

    pub lambda_grid: String,
    pub c_grid: String,
    pub windows: usize,
    pub margin: f64,

    pub lyapunov: Lyapunov,
    pub start_q: u64,
    pub start_v: u64,
    pub horizon_k: u64,

    pub alpha: f64,

    pub w0: u64,
    pub path_horizon: u64,
    pub r_max: u64,
    pub delta: f64,
    pub lag_cap: usize,

    pub output: PathBuf,
    pub format: OutputFormat,
    /// Worker threads; does not influence any artifact.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: Command::Simulate,
            seed: 42,
            lambda: 0.3,
            p: 0.5,
            c: 1.0,
            arrival_law: ArrivalLaw::Poisson,
            harvest_policy: HarvestPolicy::Reciprocal,
            horizon: 1_000_000,
            burn_in: 1_000,
            replications: 10_000,
            stride: 1,
            q_ceiling: DEFAULT_Q_CEILING,
            initial_q: 0,
            initial_v: 0,
            lambda_grid: "0.05:0.55:0.05".into(),
            c_grid: "0.25:3.0:0.25".into(),
            windows: 20,
            margin: 0.05,
            lyapunov: Lyapunov::QPlusV,
            start_q: 100_000,
            start_v: 2,
            horizon_k: 200,
            alpha: 0.5,
            w0: 10,
            path_horizon: 1_000,
            r_max: 4,
            delta: 0.05,
            lag_cap: 60,
            output: PathBuf::from("out.csv"),
            format: OutputFormat::Csv,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_params(&self) -> Result<ModelParams, ConfigError> {
        let params = ModelParams::new(self.lambda, self.p, self.c)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?
            .with_arrival_law(self.arrival_law)
            .with_harvest_policy(self.harvest_policy);
        params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(params)
    }

    pub fn lambda_values(&self) -> Result<Vec<f64>, ConfigError> {
        parse_grid(&self.lambda_grid).map_err(|source| ConfigError::Grid {
            field: "lambda_grid",
            source,
        })
    }

    pub fn c_values(&self) -> Result<Vec<f64>, ConfigError> {
        parse_grid(&self.c_grid).map_err(|source| ConfigError::Grid {
            field: "c_grid",
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return bad("unsupported schema_version");
        }
        self.model_params()?;
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if self.initial_v > self.initial_q || self.start_v > self.start_q {
            return bad("energized count exceeds queue length");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be finite and non-negative");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if self.horizon_k == 0 {
            return bad("horizon_k must be at least 1");
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        match self.command {
            Command::Sweep => {
                for &l in &self.lambda_values()? {
                    if !(l > 0.0 && l < 1.0) {
                        return bad("lambda grid values must lie in (0, 1)");
                    }
                }
                for &c in &self.c_values()? {
                    if c <= 0.0 {
                        return bad("c grid values must be positive");
                    }
                }
                if self.windows < 20 || self.horizon < 10_000 {
                    return bad("sweep needs windows >= 20 and horizon >= 10000");
                }
            }
            Command::Remark3 => {
                if !(self.alpha > 0.0 && self.alpha.is_finite()) || self.alpha == 1.0 {
                    return bad("alpha must be positive, finite and different from 1");
                }
                if self.windows < 20 || self.horizon < 10_000 {
                    return bad("remark3 needs horizon >= 10000");
                }
            }
            Command::AuxVerify => {
                if self.horizon <= self.burn_in {
                    return bad("horizon must exceed burn_in");
                }
            }
            Command::Lemma1Verify => {
                if self.replications < 10_000 {
                    return bad("lemma1-verify needs replications >= 10000");
                }
            }
            Command::Simulate | Command::Drift => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"command":"sweep","lambda":0.2}"#).unwrap();
        assert_eq!(cfg.command, Command::Sweep);
        assert_eq!(cfg.lambda, 0.2);
        assert_eq!(cfg.c, 1.0);
    }

    #[test]
    fn rejects_out_of_range() {
        for text in [
            r#"{"lambda":1.0}"#,
            r#"{"lambda":0}"#,
            r#"{"p":0}"#,
            r#"{"p":1.5}"#,
            r#"{"c":-1}"#,
            r#"{"horizon":0}"#,
            r#"{"schema_version":2}"#,
            r#"{"unknown_field":1}"#,
            r#"{"command":"sweep","lambda_grid":"0.5:0.1:0.1"}"#,
            r#"{"command":"sweep","lambda_grid":"0.5:1.5:0.1"}"#,
            r#"{"command":"remark3","alpha":1.0}"#,
            r#"{"harvest_policy":{"kind":"power_law","alpha":-2}}"#,
            r#"{"threads":0}"#,
            "not json",
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn harvest_syntax() {
        assert_eq!(parse_harvest_policy("reciprocal").unwrap(), HarvestPolicy::Reciprocal);
        assert_eq!(
            parse_harvest_policy("power:0.5").unwrap(),
            HarvestPolicy::PowerLaw { alpha: 0.5 }
        );
        assert_eq!(
            parse_harvest_policy("constant:0.2").unwrap(),
            HarvestPolicy::Constant { mu: 0.2 }
        );
        assert!(parse_harvest_policy("power:").is_err());
        assert!(parse_harvest_policy("power:nan").is_err());
        assert!(parse_harvest_policy("linear").is_err());
    }
}
