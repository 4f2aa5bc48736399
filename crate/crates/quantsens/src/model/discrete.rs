use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::DistributionSpec;
use crate::error::{domain, invalid, Result};
use crate::rng::{domain as dom, par_chunks, SeedSpec, Stream};
use crate::special::{norm_pdf, norm_quantile};

/// Severity law of the summands in a compound sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Severity {
    Distribution(DistributionSpec),
    /// Finitely many values with probabilities; used for exact enumeration.
    Atoms {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl Severity {
    pub fn validate(&self) -> Result<()> {
        match self {
            Severity::Distribution(d) => {
                d.validate()?;
                if d.is_discrete() {
                    return Err(invalid("use atoms for a discrete severity"));
                }
                Ok(())
            }
            Severity::Atoms { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(invalid("severity atoms need matching, non-empty values and probs"));
                }
                if values.iter().any(|v| !v.is_finite()) || probs.iter().any(|p| !(*p > 0.0)) {
                    return Err(invalid("severity atoms need finite values and positive probabilities"));
                }
                if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(invalid("severity atom probabilities must sum to 1"));
                }
                Ok(())
            }
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            Severity::Distribution(d) => d.quantile(u),
            Severity::Atoms { values, probs } => {
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u <= acc {
                        return Ok(*v);
                    }
                }
                Ok(*values.last().expect("validated non-empty"))
            }
        }
    }

    /// Density; atoms have none.
    pub fn pdf(&self, y: f64) -> Result<f64> {
        match self {
            Severity::Distribution(d) => d.pdf(y),
            Severity::Atoms { .. } => Err(invalid("atom severities have no density")),
        }
    }
}

/// The loss as a function of the frequency outcome and severities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Aggregation {
    /// Y₁ + … + Y_W.
    CompoundSum,
    /// A fixed loss for each support point, ignoring severities.
    Tabulated { values: Vec<f64> },
}

/// A discrete driver W on `support` with P(W ≤ support[k]) = cumulative[k].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteModelSpec {
    pub support: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub severity: Severity,
    pub aggregation: Aggregation,
}

impl DiscreteModelSpec {
    /// Truncated negative-binomial frequency on 0, 1, …, with the given severity.
    pub fn negative_binomial(mean: f64, overdispersion: f64, truncation_quantile: f64, severity: Severity) -> Result<Self> {
        let nb = DistributionSpec::NegativeBinomial { mean, overdispersion, truncation_quantile };
        nb.validate()?;
        let table = nb.table().expect("negative binomial is tabulated");
        let spec = DiscreteModelSpec {
            support: (0..table.cdf.len()).map(|k| k as f64).collect(),
            cumulative: table.cdf,
            severity,
            aggregation: Aggregation::CompoundSum,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.support.len();
        if r == 0 || self.cumulative.len() != r {
            return Err(invalid("support and cumulative probabilities must have equal, non-zero length"));
        }
        if self.support.windows(2).any(|w| !(w[0] < w[1])) || self.support.iter().any(|w| !w.is_finite()) {
            return Err(invalid("support must be finite and strictly increasing"));
        }
        if self.cumulative[0] <= 0.0 || self.cumulative.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("cumulative probabilities must be positive and strictly increasing"));
        }
        if self.cumulative[r - 1] != 1.0 {
            return Err(invalid("the last cumulative probability must equal 1"));
        }
        self.severity.validate()?;
        match &self.aggregation {
            Aggregation::CompoundSum => {
                if self.support.iter().any(|w| *w < 0.0 || w.fract() != 0.0) {
                    return Err(invalid("a compound sum needs non-negative integer support"));
                }
            }
            Aggregation::Tabulated { values } => {
                if values.len() != r || values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("tabulated losses must be finite, one per support point"));
                }
            }
        }
        Ok(())
    }

    pub fn r(&self) -> usize {
        self.support.len()
    }

    pub fn pmf(&self, k: usize) -> f64 {
        self.cumulative[k] - if k == 0 { 0.0 } else { self.cumulative[k - 1] }
    }

    /// Support index of W = F_W⁻¹(u).
    pub fn index_of(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c < u).min(self.r() - 1)
    }

    /// Number of severities read by the largest outcome.
    pub fn max_count(&self) -> usize {
        match self.aggregation {
            Aggregation::CompoundSum => *self.support.last().expect("validated") as usize,
            Aggregation::Tabulated { .. } => 0,
        }
    }

    /// h(support[k], Y) given the running sums of the severities.
    fn h(&self, k: usize, partial_sums: &[f64]) -> f64 {
        match &self.aggregation {
            Aggregation::CompoundSum => partial_sums[self.support[k] as usize],
            Aggregation::Tabulated { values } => values[k],
        }
    }

    pub fn model_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("spec serialises");
        let canonical = serde_json::to_string(&value).expect("value serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Simulates W by inversion of a uniform and the severities it needs.
    pub fn simulate(&self, n: usize, seed: SeedSpec) -> Result<DiscreteScenarioSet> {
        self.validate()?;
        let with_density = matches!(self.severity, Severity::Distribution(_));
        let chunks = par_chunks(n, seed, dom::DISCRETE, |s, rows| {
            let mut out = Rows::with_capacity(rows.len());
            let mut sums = Vec::with_capacity(self.max_count() + 1);
            for _ in rows {
                self.draw_row(s, with_density, &mut sums, &mut out)?;
            }
            Ok(out)
        })?;
        let mut all = Rows::with_capacity(n);
        for c in chunks {
            all.extend(c);
        }
        Ok(DiscreteScenarioSet {
            n_scenarios: n,
            index: all.index,
            uniform: all.uniform,
            loss: all.loss,
            loss_up: all.loss_up,
            loss_down: all.loss_down,
            severity_weight: all.weight,
            seed,
            model_hash: self.model_hash(),
        })
    }

    fn draw_row(&self, s: &mut Stream, with_density: bool, sums: &mut Vec<f64>, out: &mut Rows) -> Result<()> {
        let u = s.uniform();
        let k = self.index_of(u);
        let r = self.r();
        let needed = match self.aggregation {
            Aggregation::CompoundSum => self.support[(k + 1).min(r - 1)] as usize,
            Aggregation::Tabulated { .. } => 0,
        };
        let own = match self.aggregation {
            Aggregation::CompoundSum => self.support[k] as usize,
            Aggregation::Tabulated { .. } => 0,
        };
        sums.clear();
        sums.push(0.0);
        let mut weight = 0.0;
        for l in 0..needed {
            let ul = s.uniform();
            let y = self.severity.quantile(ul)?;
            sums.push(sums[l] + y);
            if with_density && l < own {
                let f = self.severity.pdf(y)?;
                if !(f > 0.0) {
                    return Err(domain(format!("severity density underflows at {y}")));
                }
                weight += norm_pdf(norm_quantile(ul)) / f;
            }
        }
        out.index.push(k as u32);
        out.uniform.push(u);
        out.loss.push(self.h(k, sums));
        out.loss_up.push(if k + 1 < r { self.h(k + 1, sums) } else { 0.0 });
        out.loss_down.push(if k > 0 { self.h(k - 1, sums) } else { f64::NAN });
        out.weight.push(if with_density { weight } else { f64::NAN });
        Ok(())
    }
}

#[derive(Default)]
struct Rows {
    index: Vec<u32>,
    uniform: Vec<f64>,
    loss: Vec<f64>,
    loss_up: Vec<f64>,
    loss_down: Vec<f64>,
    weight: Vec<f64>,
}

impl Rows {
    fn with_capacity(n: usize) -> Self {
        Rows {
            index: Vec::with_capacity(n),
            uniform: Vec::with_capacity(n),
            loss: Vec::with_capacity(n),
            loss_up: Vec::with_capacity(n),
            loss_down: Vec::with_capacity(n),
            weight: Vec::with_capacity(n),
        }
    }

    fn extend(&mut self, o: Rows) {
        self.index.extend(o.index);
        self.uniform.extend(o.uniform);
        self.loss.extend(o.loss);
        self.loss_up.extend(o.loss_up);
        self.loss_down.extend(o.loss_down);
        self.weight.extend(o.weight);
    }
}

/// Simulated discrete-model rows.
///
/// `loss_up` is the loss had W sat one support point higher (0 above the top),
/// `loss_down` one point lower (NaN below the bottom), with the same severities.
/// `severity_weight` is Σ_{ℓ≤W} φ(Φ⁻¹(U_ℓ))/f_Y(Y_ℓ), NaN for atom severities.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteScenarioSet {
    pub n_scenarios: usize,
    pub index: Vec<u32>,
    pub uniform: Vec<f64>,
    pub loss: Vec<f64>,
    pub loss_up: Vec<f64>,
    pub loss_down: Vec<f64>,
    pub severity_weight: Vec<f64>,
    pub seed: SeedSpec,
    pub model_hash: String,
}

impl DiscreteScenarioSet {
    pub fn len(&self) -> usize {
        self.n_scenarios
    }

    pub fn is_empty(&self) -> bool {
        self.n_scenarios == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma_model() -> DiscreteModelSpec {
        DiscreteModelSpec::negative_binomial(5.0, 2.5, 0.999, Severity::Distribution(DistributionSpec::Gamma { shape: 5.0, scale: 1.0 }))
            .unwrap()
    }

    #[test]
    fn compound_rows_are_consistent() {
        let spec = gamma_model();
        let set = spec.simulate(20_000, SeedSpec(3)).unwrap();
        for i in 0..set.len() {
            let k = set.index[i] as usize;
            assert!(set.loss_up[i] >= set.loss[i] || k + 1 == spec.r());
            if k == 0 {
                assert_eq!(set.loss[i], 0.0);
                assert!(set.loss_down[i].is_nan());
            } else {
                assert!(set.loss_down[i] <= set.loss[i]);
            }
        }
        let mean_w: f64 = set.index.iter().map(|k| spec.support[*k as usize]).sum::<f64>() / set.len() as f64;
        assert!((mean_w - 5.0).abs() < 0.1, "{mean_w}");
        let mean_t: f64 = set.loss.iter().sum::<f64>() / set.len() as f64;
        assert!((mean_t - 25.0).abs() < 0.6, "{mean_t}");
    }

    #[test]
    fn tabulated_bernoulli() {
        let spec = DiscreteModelSpec {
            support: vec![0.0, 1.0],
            cumulative: vec![0.7, 1.0],
            severity: Severity::Atoms { values: vec![1.0], probs: vec![1.0] },
            aggregation: Aggregation::CompoundSum,
        };
        let set = spec.simulate(10_000, SeedSpec(1)).unwrap();
        let p1 = set.loss.iter().filter(|l| **l == 1.0).count() as f64 / 1e4;
        assert!((p1 - 0.3).abs() < 0.015);
        assert!(set.severity_weight.iter().all(|w| w.is_nan()));
    }

    #[test]
    fn validation() {
        let mut spec = gamma_model();
        spec.cumulative[1] = spec.cumulative[0];
        assert!(spec.validate().is_err());
        let mut spec = gamma_model();
        *spec.cumulative.last_mut().unwrap() = 0.99;
        assert!(spec.validate().is_err());
        let mut spec = gamma_model();
        spec.support[1] = 1.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn severity_serde_forms() {
        let s: Severity = serde_json::from_str(r#"{"atoms": {"values": [1.0], "probs": [1.0]}}"#).unwrap();
        assert!(matches!(s, Severity::Atoms { .. }));
        let s: Severity = serde_json::from_str(r#"{"distribution": {"type": "gamma", "shape": 5.0, "scale": 1.0}}"#).unwrap();
        assert!(matches!(s, Severity::Distribution(_)));
    }
}
