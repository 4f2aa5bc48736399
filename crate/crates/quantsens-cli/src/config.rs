//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use quantsens::estimators::{BandSpec, RiskMeasureSpec};
use quantsens::model::{DiscreteModelSpec, Factor, LossModelSpec, Severity};
use quantsens::stress::StressSpec;

use crate::CliError;

pub const CONFIG_VERSION: u64 = 1;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub targets: Vec<Factor>,
    #[serde(default)]
    pub stresses: Vec<StressSpec>,
    #[serde(default)]
    pub risk_measures: Vec<RiskMeasureSpec>,
    #[serde(default = "default_n")]
    pub n_scenarios: usize,
    /// Rows per conditional dataset; defaults to `n_scenarios`.
    #[serde(default)]
    pub n_conditional: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_n() -> usize {
    100_000
}

fn default_delta() -> f64 {
    BandSpec::default().delta
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub replicates: usize,
    pub fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 100, fraction: 0.9 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelConfig {
    Loss(LossModelSpec),
    Discrete(DiscreteModelSpec),
    /// Negative-binomial count of i.i.d. severities.
    Compound(CompoundModel),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompoundModel {
    pub freq_mean: f64,
    pub overdispersion: f64,
    #[serde(default = "default_truncation")]
    pub truncation_quantile: f64,
    pub severity: Severity,
}

fn default_truncation() -> f64 {
    0.999
}

pub enum Model {
    Loss(LossModelSpec),
    Discrete(DiscreteModelSpec),
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model, CliError> {
        Ok(match self {
            ModelConfig::Loss(spec) => {
                spec.validate()?;
                Model::Loss(spec.clone())
            }
            ModelConfig::Discrete(dm) => {
                dm.validate()?;
                Model::Discrete(dm.clone())
            }
            ModelConfig::Compound(c) => Model::Discrete(DiscreteModelSpec::negative_binomial(
                c.freq_mean,
                c.overdispersion,
                c.truncation_quantile,
                c.severity.clone(),
            )?),
        })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed JSON: {e}")))?;
        match value.get("version").and_then(Value::as_u64) {
            Some(CONFIG_VERSION) => {}
            Some(v) => return Err(CliError::Config(format!("config version {v} is not supported (expected {CONFIG_VERSION})"))),
            None => return Err(CliError::Config("config needs an integer \"version\" field".into())),
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let pointer = json_pointer(e.path());
            CliError::Config(format!("at {pointer}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every part that can be checked without simulating.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!("config version {} is not supported", self.version)));
        }
        let model = self.model.build()?;
        for (i, s) in self.stresses.iter().enumerate() {
            s.validate().map_err(|e| CliError::Config(format!("at /stresses/{i}: {e}")))?;
        }
        for (i, rm) in self.risk_measures.iter().enumerate() {
            rm.validate().map_err(|e| CliError::Config(format!("at /risk_measures/{i}: {e}")))?;
        }
        if let Model::Loss(spec) = &model {
            for (i, t) in self.targets.iter().enumerate() {
                t.coord(spec.m(), spec.n()).map_err(|e| CliError::Config(format!("at /targets/{i}: {e}")))?;
            }
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(CliError::Config(format!("at /delta: {} must lie in (0, 0.5)", self.delta)));
        }
        if self.n_scenarios == 0 || self.n_conditional == Some(0) {
            return Err(CliError::Config("scenario counts must be positive".into()));
        }
        Ok(())
    }

    /// Target/stress pairs: one stress for every target, or one per target.
    pub fn cases(&self) -> Result<Vec<(Factor, StressSpec)>, CliError> {
        if self.targets.is_empty() || self.stresses.is_empty() {
            return Err(CliError::Config("at least one target and one stress are required".into()));
        }
        match self.stresses.len() {
            1 => Ok(self.targets.iter().map(|t| (*t, self.stresses[0].clone())).collect()),
            k if k == self.targets.len() => Ok(self.targets.iter().copied().zip(self.stresses.iter().cloned()).collect()),
            k => Err(CliError::Config(format!("{k} stresses for {} targets: give one stress or one per target", self.targets.len()))),
        }
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "model": {"compound": {"freq_mean": 2, "overdispersion": 2,
                  "severity": {"atoms": {"values": [1, 2], "probs": [0.5, 0.5]}}}},
        "stresses": [{"type": "wang", "sign": 1}]
    }"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.n_scenarios, 100_000);
        assert_eq!(cfg.delta, 0.005);
        assert_eq!(cfg.bootstrap.replicates, 100);
    }

    #[test]
    fn wrong_version_is_a_config_error() {
        let text = MINIMAL.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(m)) if m.contains("version 2")));
    }

    #[test]
    fn unknown_key_reports_pointer() {
        let text = MINIMAL.replace("\"sign\": 1", "\"sign\": 1, \"beta\": 3");
        match RunConfig::parse(&text) {
            Err(CliError::Config(m)) => assert!(m.contains("/stresses/0"), "{m}"),
            _ => panic!("expected a config error"),
        }
    }

    #[test]
    fn stresses_broadcast_or_pair() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.targets = vec![Factor::X(0), Factor::Z(1)];
        assert_eq!(cfg.cases().unwrap().len(), 2);
        cfg.stresses = vec![cfg.stresses[0].clone(); 3];
        assert!(cfg.cases().is_err());
    }
}
