//! Negative-binomial frequency with Gamma severities: how the ES sensitivity
//! splits between frequency and severity as the model parameters move.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{invalid, Result};
use crate::estimators::{compound_freq_sens, compound_sev_sens};
use crate::model::{DiscreteModelSpec, Severity};
use crate::rng::SeedSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompoundConfig {
    pub freq_mean: f64,
    /// Var(W) / E[W].
    pub overdispersion: f64,
    pub truncation_quantile: f64,
    pub severity_shape: f64,
    /// The scaled sensitivities do not depend on it.
    pub severity_scale: f64,
    pub alpha: f64,
}

impl Default for CompoundConfig {
    fn default() -> Self {
        CompoundConfig {
            freq_mean: 5.0,
            overdispersion: 2.5,
            truncation_quantile: 0.999,
            severity_shape: 5.0,
            severity_scale: 1.0,
            alpha: 0.95,
        }
    }
}

impl CompoundConfig {
    pub fn model(&self) -> Result<DiscreteModelSpec> {
        let severity = Severity::Distribution(DistributionSpec::Gamma { shape: self.severity_shape, scale: self.severity_scale });
        DiscreteModelSpec::negative_binomial(self.freq_mean, self.overdispersion, self.truncation_quantile, severity)
    }

    /// Gamma skewness 2/√shape.
    pub fn skewness(&self) -> f64 {
        2.0 / self.severity_shape.sqrt()
    }
}

/// The parameter a study varies, one at a time from the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    FreqMean,
    Overdispersion,
    Skewness,
    Alpha,
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::FreqMean => "freq_mean",
            Sweep::Overdispersion => "overdispersion",
            Sweep::Skewness => "skewness",
            Sweep::Alpha => "alpha",
        }
    }

    pub const ALL: [Sweep; 4] = [Sweep::FreqMean, Sweep::Overdispersion, Sweep::Skewness, Sweep::Alpha];

    /// Grid used when none is given; each contains the baseline value.
    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            Sweep::FreqMean => vec![1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 16.0, 20.0],
            Sweep::Overdispersion => vec![1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0],
            Sweep::Skewness => vec![0.4, 0.6, 0.8, 2.0 / 5f64.sqrt(), 1.2, 1.6, 2.0],
            Sweep::Alpha => vec![0.9, 0.925, 0.95, 0.975, 0.99],
        }
    }

    pub fn apply(&self, base: &CompoundConfig, value: f64) -> Result<CompoundConfig> {
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid(format!("{} value {value} must be positive", self.name())));
        }
        let mut cfg = base.clone();
        match self {
            Sweep::FreqMean => cfg.freq_mean = value,
            Sweep::Overdispersion => cfg.overdispersion = value,
            Sweep::Skewness => cfg.severity_shape = 4.0 / (value * value),
            Sweep::Alpha => cfg.alpha = value,
        }
        Ok(cfg)
    }
}

/// Scaled ES sensitivities at one parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompoundPoint {
    pub parameter: f64,
    pub quantile: f64,
    pub expected_shortfall: f64,
    pub freq_sensitivity: f64,
    pub freq_stderr: f64,
    pub sev_sensitivity: f64,
    pub sev_stderr: f64,
    pub scaled_freq: f64,
    pub scaled_sev: f64,
}

/// Both closed-form sensitivities on `n` simulated scenarios.
pub fn run_compound_point(cfg: &CompoundConfig, parameter: f64, n: usize, seed: SeedSpec) -> Result<CompoundPoint> {
    let dm = cfg.model()?;
    let set = dm.simulate(n, seed)?;
    let freq = compound_freq_sens(&dm, &set, cfg.alpha)?;
    let sev = compound_sev_sens(&dm, &set, cfg.alpha)?;
    let es = freq.diagnostics["expected_shortfall"];
    Ok(CompoundPoint {
        parameter,
        quantile: freq.diagnostics["quantile"],
        expected_shortfall: es,
        freq_sensitivity: freq.value,
        freq_stderr: freq.stderr,
        sev_sensitivity: sev.value,
        sev_stderr: sev.stderr,
        scaled_freq: freq.value / es,
        scaled_sev: sev.value / es,
    })
}

/// One point per grid value, all on the same seed.
pub fn run_compound_study(base: &CompoundConfig, sweep: Sweep, grid: &[f64], n: usize, seed: SeedSpec) -> Result<Vec<CompoundPoint>> {
    if grid.is_empty() {
        return Err(invalid("the sweep grid is empty"));
    }
    grid.iter().map(|&v| run_compound_point(&sweep.apply(base, v)?, v, n, seed)).collect()
}

/// Column order of the sweep CSV.
pub const COMPOUND_COLUMNS: [&str; 10] = [
    "sweep",
    "parameter",
    "quantile",
    "expected_shortfall",
    "freq_sensitivity",
    "freq_stderr",
    "sev_sensitivity",
    "sev_stderr",
    "scaled_freq",
    "scaled_sev",
];

pub fn write_compound_csv(path: &Path, sweeps: &[(Sweep, Vec<CompoundPoint>)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COMPOUND_COLUMNS)?;
    let num = |x: f64| format!("{x:.16e}");
    for (sweep, points) in sweeps {
        for p in points {
            w.write_record([
                sweep.name().to_string(),
                num(p.parameter),
                num(p.quantile),
                num(p.expected_shortfall),
                num(p.freq_sensitivity),
                num(p.freq_stderr),
                num(p.sev_sensitivity),
                num(p.sev_stderr),
                num(p.scaled_freq),
                num(p.scaled_sev),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_skewness() {
        assert!((CompoundConfig::default().skewness() - 0.894).abs() < 5e-4);
    }

    #[test]
    fn sweeps_contain_the_baseline() {
        let base = CompoundConfig::default();
        for s in Sweep::ALL {
            let hit = s.default_grid().iter().any(|v| s.apply(&base, *v).unwrap() == base);
            assert!(hit, "{}", s.name());
        }
    }

    #[test]
    fn skewness_maps_to_shape() {
        let cfg = Sweep::Skewness.apply(&CompoundConfig::default(), 1.0).unwrap();
        assert_eq!(cfg.severity_shape, 4.0);
    }
}
