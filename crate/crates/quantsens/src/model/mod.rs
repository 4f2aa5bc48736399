//! Loss models L = Σⱼ gⱼ · 1{Xⱼ ≤ dⱼ}, their simulation and stressed
//! re-simulation under common random numbers.

mod discrete;
mod scenarios;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::copula::{Dependence, DependenceSpec};
use crate::distributions::DistributionSpec;
use crate::error::{invalid, Error, Result};

pub use discrete::{Aggregation, DiscreteModelSpec, DiscreteScenarioSet, Severity};
pub use scenarios::{read_scenarios, simulate, simulate_stressed, write_scenarios, Mode, ScenarioSet, Sidecar};

/// A risk factor: indicator driver `X` or continuous factor `Z` (zero-based index).
///
/// Text form is one-based, e.g. `X1`, `Z12`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Factor {
    X(usize),
    Z(usize),
}

impl Factor {
    /// Combined coordinate index with X first.
    pub fn coord(&self, m: usize, n: usize) -> Result<usize> {
        match *self {
            Factor::X(i) if i < m => Ok(i),
            Factor::Z(k) if k < n => Ok(m + k),
            _ => Err(invalid(format!("factor {self} out of range for m = {m}, n = {n}"))),
        }
    }

    pub fn from_coord(c: usize, m: usize) -> Factor {
        if c < m {
            Factor::X(c)
        } else {
            Factor::Z(c - m)
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::X(i) => write!(f, "X{}", i + 1),
            Factor::Z(k) => write!(f, "Z{}", k + 1),
        }
    }
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("factor label '{s}' must look like X1 or Z3"));
        let mut chars = s.chars();
        let kind = chars.next().ok_or_else(bad)?;
        let idx: usize = chars.as_str().parse().map_err(|_| bad())?;
        if idx == 0 {
            return Err(bad());
        }
        match kind {
            'X' | 'x' => Ok(Factor::X(idx - 1)),
            'Z' | 'z' => Ok(Factor::Z(idx - 1)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Factor {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Factor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One reinsurance-style layer min((z − attachment)₊, limit) on a Z coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerTerm {
    pub z_index: usize,
    pub attachment: f64,
    pub limit: f64,
}

/// Jump size of one indicator term. Indices are zero-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GFunctionSpec {
    /// intercept + z·coefficients (+ x·coefficients in the general model).
    Linear {
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        z: Vec<f64>,
        #[serde(default)]
        x: Vec<f64>,
    },
    LayerSum {
        terms: Vec<LayerTerm>,
    },
    Identity {
        z_index: usize,
    },
}

impl GFunctionSpec {
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match self {
            GFunctionSpec::Linear { intercept, z: cz, x: cx } => {
                intercept + cz.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + cx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            GFunctionSpec::LayerSum { terms } => terms.iter().map(|t| (z[t.z_index] - t.attachment).max(0.0).min(t.limit)).sum(),
            GFunctionSpec::Identity { z_index } => z[*z_index],
        }
    }

    /// Partial derivative in one factor; zero at layer kinks.
    pub fn partial(&self, x: &[f64], z: &[f64], wrt: Factor) -> f64 {
        let _ = x;
        match (self, wrt) {
            (GFunctionSpec::Linear { z: cz, .. }, Factor::Z(k)) => cz.get(k).copied().unwrap_or(0.0),
            (GFunctionSpec::Linear { x: cx, .. }, Factor::X(i)) => cx.get(i).copied().unwrap_or(0.0),
            (GFunctionSpec::LayerSum { terms }, Factor::Z(k)) => terms
                .iter()
                .filter(|t| t.z_index == k)
                .map(|t| {
                    let v = z[k];
                    if v > t.attachment && v < t.attachment + t.limit {
                        1.0
                    } else {
                        0.0
                    }
                })
                .sum(),
            (GFunctionSpec::Identity { z_index }, Factor::Z(k)) if *z_index == k => 1.0,
            _ => 0.0,
        }
    }

    /// Whether the jump depends on any X coordinate.
    pub fn reads_x(&self) -> bool {
        matches!(self, GFunctionSpec::Linear { x, .. } if x.iter().any(|c| *c != 0.0))
    }

    fn validate(&self, m: usize, n: usize) -> Result<()> {
        match self {
            GFunctionSpec::Linear { intercept, z, x } => {
                if z.len() > n || x.len() > m || !intercept.is_finite() {
                    return Err(invalid("linear jump coefficients exceed model dimensions"));
                }
                if z.iter().chain(x).any(|c| !c.is_finite()) {
                    return Err(invalid("linear jump coefficients must be finite"));
                }
            }
            GFunctionSpec::LayerSum { terms } => {
                for t in terms {
                    if t.z_index >= n {
                        return Err(invalid(format!("layer z_index {} out of range", t.z_index)));
                    }
                    if !(t.attachment >= 0.0 && t.limit > 0.0 && t.limit.is_finite()) {
                        return Err(invalid("layers need attachment >= 0 and a positive finite limit"));
                    }
                }
            }
            GFunctionSpec::Identity { z_index } => {
                if *z_index >= n {
                    return Err(invalid(format!("identity z_index {z_index} out of range")));
                }
            }
        }
        Ok(())
    }
}

/// ∂gⱼ/∂(wrt) at (x, z).
pub fn partial_g(gspec: &GFunctionSpec, z: &[f64], x: &[f64], wrt: Factor) -> f64 {
    gspec.partial(x, z, wrt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossModelSpec {
    pub x_marginals: Vec<DistributionSpec>,
    pub z_marginals: Vec<DistributionSpec>,
    pub thresholds: Vec<f64>,
    pub g: Vec<GFunctionSpec>,
    pub dependence: DependenceSpec,
    /// Jump sizes may read X.
    #[serde(default)]
    pub general_mode: bool,
}

impl LossModelSpec {
    pub fn m(&self) -> usize {
        self.x_marginals.len()
    }

    pub fn n(&self) -> usize {
        self.z_marginals.len()
    }

    pub fn marginal(&self, f: Factor) -> &DistributionSpec {
        match f {
            Factor::X(i) => &self.x_marginals[i],
            Factor::Z(k) => &self.z_marginals[k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.m(), self.n());
        if self.thresholds.len() != m || self.g.len() != m {
            return Err(invalid(format!("{} X marginals but {} thresholds and {} jump functions", m, self.thresholds.len(), self.g.len())));
        }
        for d in self.x_marginals.iter().chain(&self.z_marginals) {
            d.validate()?;
            if d.is_discrete() {
                return Err(invalid("loss-model marginals must be continuous"));
            }
        }
        for (j, (d, marg)) in self.thresholds.iter().zip(&self.x_marginals).enumerate() {
            let p = marg.cdf(*d)?;
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(format!("threshold of X{} has probability {p}, outside (0, 1)", j + 1)));
            }
        }
        for g in &self.g {
            g.validate(m, n)?;
            if g.reads_x() && !self.general_mode {
                return Err(invalid("jump functions read X; set general_mode"));
            }
        }
        Dependence::new(&self.dependence, m, n).map(|_| ())
    }

    /// Hex SHA-256 of the canonical (key-sorted) JSON form.
    pub fn model_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("spec serialises");
        let canonical = serde_json::to_string(&value).expect("value serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// L at one point.
    pub fn loss(&self, x: &[f64], z: &[f64]) -> f64 {
        self.loss_with_thresholds(x, z, &self.thresholds)
    }

    fn loss_with_thresholds(&self, x: &[f64], z: &[f64], d: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 0..x.len() {
            if x[j] <= d[j] {
                total += self.g[j].eval(x, z);
            }
        }
        total
    }
}

/// A validated spec with its prepared dependence sampler.
#[derive(Clone, Debug)]
pub struct LossModel {
    pub spec: LossModelSpec,
    pub dependence: Dependence,
    pub hash: String,
}

impl LossModel {
    pub fn new(spec: &LossModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(LossModel { spec: spec.clone(), dependence: Dependence::new(&spec.dependence, spec.m(), spec.n())?, hash: spec.model_hash() })
    }

    pub fn m(&self) -> usize {
        self.spec.m()
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn check_scenarios(&self, scen: &ScenarioSet) -> Result<()> {
        if scen.model_hash != self.hash {
            return Err(Error::ModelMismatch { expected: self.hash.clone(), found: scen.model_hash.clone() });
        }
        Ok(())
    }
}
