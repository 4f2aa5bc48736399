//! Sensitivity estimators for VaR, ES and the mean: marginal and cascade
//! stresses of continuous factors, stresses of discrete drivers, and the
//! compound-sum closed forms. Uncertainty comes from a multi-dataset bootstrap.

mod compound;
mod factor;
mod plan;

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Error, Result};
use crate::rng::{domain, SeedSpec, Stream};

pub use compound::{compound_freq_sens, compound_sev_sens, discrete_sens};
pub use factor::{cascade_sens, conditional_scenarios, marginal_sens, marginal_sens_batch, ConditionalSets};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskMeasureSpec {
    Var { alpha: f64 },
    Es { alpha: f64 },
    Mean,
}

impl RiskMeasureSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RiskMeasureSpec::Var { alpha } | RiskMeasureSpec::Es { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(invalid(format!("alpha {alpha} must lie in (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RiskMeasureSpec::Var { .. } => "var",
            RiskMeasureSpec::Es { .. } => "es",
            RiskMeasureSpec::Mean => "mean",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            RiskMeasureSpec::Var { alpha } | RiskMeasureSpec::Es { alpha } => Some(alpha),
            RiskMeasureSpec::Mean => None,
        }
    }
}

/// Half-width, in probability, of the bands replacing zero-probability
/// conditioning events.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    pub delta: f64,
}

impl Default for BandSpec {
    fn default() -> Self {
        BandSpec { delta: 0.005 }
    }
}

impl BandSpec {
    /// Checks the band fits around probability level `p`.
    pub fn check_at(&self, p: f64) -> Result<()> {
        if !(self.delta > 0.0) || !(p - self.delta > 0.0 && p + self.delta < 1.0) {
            return Err(invalid(format!("band of half-width {} does not fit around level {p}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSpec {
    /// Zero gives a point estimate without uncertainty.
    pub replicates: usize,
    /// Resample size as a fraction of each dataset.
    pub fraction: f64,
    pub seed: SeedSpec,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        BootstrapSpec { replicates: 100, fraction: 0.9, seed: SeedSpec(0) }
    }
}

impl BootstrapSpec {
    pub fn none() -> Self {
        BootstrapSpec { replicates: 0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 1 {
            return Err(invalid("a bootstrap needs at least 2 replicates"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(invalid(format!("bootstrap fraction {} must lie in (0, 1]", self.fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub value: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_bootstrap: usize,
    /// Scenarios inside the conditioning events.
    pub n_effective: usize,
    /// Per-factor contributions of a cascade estimate; they sum to `value`.
    pub decomposition: Option<Vec<(String, f64)>>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Index of the left empirical α-quantile in sorted order.
fn quantile_rank(alpha: f64, n: usize) -> usize {
    // αn is often a float a hair above an integer.
    let k = (alpha * n as f64 * (1.0 - 1e-12)).ceil() as usize;
    k.clamp(1, n) - 1
}

/// Left empirical quantile (order statistic at ⌈αn⌉).
pub fn empirical_quantile(losses: &[f64], alpha: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyEvent("empty sample".into()));
    }
    let mut v = losses.to_vec();
    let k = quantile_rank(alpha, v.len());
    let (_, q, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*q)
}

/// Boundary-corrected empirical ES at a known quantile `q`.
fn es_at(losses: &[f64], alpha: f64, q: f64) -> f64 {
    let n = losses.len() as f64;
    let (mut above, mut at_or_below) = (0.0, 0usize);
    for &l in losses {
        if l > q {
            above += l;
        } else {
            at_or_below += 1;
        }
    }
    (above / n + q * (at_or_below as f64 / n - alpha)) / (1.0 - alpha)
}

/// Empirical VaR, ES or mean of a loss sample.
pub fn risk_measure(losses: &[f64], rm: &RiskMeasureSpec) -> Result<f64> {
    rm.validate()?;
    if losses.is_empty() {
        return Err(Error::EmptyEvent("empty sample".into()));
    }
    match *rm {
        RiskMeasureSpec::Var { alpha } => empirical_quantile(losses, alpha),
        RiskMeasureSpec::Es { alpha } => Ok(es_at(losses, alpha, empirical_quantile(losses, alpha)?)),
        RiskMeasureSpec::Mean => Ok(losses.iter().sum::<f64>() / losses.len() as f64),
    }
}

/// Quantiles at α − δ, α, α + δ from one partial sort.
fn band_quantiles(v: &mut [f64], alpha: f64, delta: f64) -> (f64, f64, f64) {
    let n = v.len();
    let (klo, kmid, khi) = (quantile_rank(alpha - delta, n), quantile_rank(alpha, n), quantile_rank(alpha + delta, n));
    v.select_nth_unstable_by(khi, f64::total_cmp);
    let hi = v[khi];
    v[..=khi].select_nth_unstable_by(kmid, f64::total_cmp);
    let mid = v[kmid];
    v[..=kmid].select_nth_unstable_by(klo, f64::total_cmp);
    (v[klo], mid, hi)
}

/// f̂(q_α) = 2δ / (q̂_{α+δ} − q̂_{α−δ}).
pub fn density_at_quantile(losses: &[f64], alpha: f64, band: &BandSpec) -> Result<f64> {
    band.check_at(alpha)?;
    if losses.is_empty() {
        return Err(Error::EmptyEvent("empty sample".into()));
    }
    let mut v = losses.to_vec();
    let (lo, _, hi) = band_quantiles(&mut v, alpha, band.delta);
    spacing_density(lo, hi, band.delta)
}

fn spacing_density(lo: f64, hi: f64, delta: f64) -> Result<f64> {
    if !(hi > lo) {
        return Err(numerical(format!("degenerate quantile spacing: q_lo = q_hi = {lo}; the loss has an atom at the quantile")));
    }
    Ok(2.0 * delta / (hi - lo))
}

/// Summary of bootstrap replicates of a vector-valued statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapSummary {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub replicates: usize,
    pub failures: usize,
}

/// Resamples each dataset independently (with replacement, `fraction` of its
/// size) and re-runs `stat` on the index sets; replicates run in parallel.
///
/// Failed replicates are dropped; more than 10% failures is an error.
pub fn bootstrap<F>(sizes: &[usize], spec: &BootstrapSpec, stat: F) -> Result<BootstrapSummary>
where
    F: Fn(&[Vec<usize>]) -> Result<Vec<f64>> + Sync,
{
    spec.validate()?;
    if spec.replicates < 2 {
        return Err(invalid("a bootstrap needs at least 2 replicates"));
    }
    let n_sets = sizes.len() as u64;
    let results: Vec<Result<Vec<f64>>> = (0..spec.replicates)
        .into_par_iter()
        .map(|b| {
            let idx: Vec<Vec<usize>> = sizes
                .iter()
                .enumerate()
                .map(|(d, &n)| {
                    let mut s = Stream::new(spec.seed, domain::BOOTSTRAP, b as u64 * n_sets + d as u64);
                    let size = ((n as f64 * spec.fraction).round() as usize).max(1).min(n.max(1));
                    (0..size).map(|_| s.below(n)).collect()
                })
                .collect();
            stat(&idx)
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = 0;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(v) if v.iter().all(|x| x.is_finite()) => ok.push(v),
            Ok(_) => failures += 1,
            Err(e) => {
                failures += 1;
                last_err = Some(e);
            }
        }
    }
    if failures * 10 > spec.replicates || ok.len() < 2 {
        let why = last_err.map(|e| e.to_string()).unwrap_or_else(|| "non-finite statistic".into());
        return Err(numerical(format!("{failures} of {} bootstrap replicates failed: {why}", spec.replicates)));
    }
    let dim = ok[0].len();
    let b = ok.len() as f64;
    let mut summary = BootstrapSummary {
        mean: vec![0.0; dim],
        stderr: vec![0.0; dim],
        ci_low: vec![0.0; dim],
        ci_high: vec![0.0; dim],
        replicates: ok.len(),
        failures,
    };
    for c in 0..dim {
        let mut col: Vec<f64> = ok.iter().map(|v| v[c]).collect();
        let mean = col.iter().sum::<f64>() / b;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
        col.sort_by(f64::total_cmp);
        summary.mean[c] = mean;
        summary.stderr[c] = var.sqrt();
        summary.ci_low[c] = percentile(&col, 0.025);
        summary.ci_high[c] = percentile(&col, 0.975);
    }
    Ok(summary)
}

/// Linear-interpolated percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Header of the sensitivity CSV; cascade runs append one column per term.
pub const RESULT_COLUMNS: [&str; 9] = ["target", "rm", "alpha", "stress_type", "value", "stderr", "ci_low", "ci_high", "n_effective"];

/// One exported row.
#[derive(Clone, Debug)]
pub struct ResultRow {
    pub target: String,
    pub rm: RiskMeasureSpec,
    pub stress_type: String,
    pub estimate: SensitivityEstimate,
}

/// Writes rows as CSV with 17 significant digits. Decomposition columns are the
/// union of term labels in first-seen order; absent terms are left empty.
pub fn write_results<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut terms: Vec<String> = Vec::new();
    for r in rows {
        for (label, _) in r.estimate.decomposition.iter().flatten() {
            if !terms.contains(label) {
                terms.push(label.clone());
            }
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = RESULT_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(terms.iter().map(|t| format!("term_{t}")));
    w.write_record(&header)?;
    let num = |x: f64| format!("{x:.16e}");
    for r in rows {
        let e = &r.estimate;
        let mut rec = vec![
            r.target.clone(),
            r.rm.name().to_string(),
            r.rm.alpha().map(num).unwrap_or_default(),
            r.stress_type.clone(),
            num(e.value),
            num(e.stderr),
            num(e.ci_low),
            num(e.ci_high),
            e.n_effective.to_string(),
        ];
        for t in &terms {
            let v = e.decomposition.iter().flatten().find(|(l, _)| l == t).map(|(_, v)| num(*v));
            rec.push(v.unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
