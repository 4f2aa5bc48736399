//! Sensitivities to a discrete driver stressed through its uniform, and the
//! closed forms for a compound sum under a Wang stress.

use std::collections::BTreeMap;

use super::plan::{IndicatorTerm, Plan};
use super::{empirical_quantile, es_at, BandSpec, BootstrapSpec, RiskMeasureSpec, SensitivityEstimate};
use crate::error::{invalid, Error, Result};
use crate::model::{Aggregation, DiscreteModelSpec, DiscreteScenarioSet};
use crate::rng::{domain, par_chunks};
use crate::special::{norm_pdf, norm_quantile};
use crate::stress::StressSpec;

fn check_set(dm: &DiscreteModelSpec, set: &DiscreteScenarioSet) -> Result<()> {
    let hash = dm.model_hash();
    if set.model_hash != hash {
        return Err(Error::ModelMismatch { expected: hash, found: set.model_hash.clone() });
    }
    Ok(())
}

/// Sensitivity of `rm` to a stress of the uniform behind W.
///
/// The top cumulative probability is 1, which every stress of uniforms fixes,
/// so only the interior support boundaries contribute. Each boundary is
/// estimated on the scenarios just below it (upward stress) or just above it
/// (downward stress).
pub fn discrete_sens(
    dm: &DiscreteModelSpec,
    set: &DiscreteScenarioSet,
    stress: &StressSpec,
    rm: &RiskMeasureSpec,
    band: &BandSpec,
    boot: &BootstrapSpec,
) -> Result<SensitivityEstimate> {
    dm.validate()?;
    check_set(dm, set)?;
    stress.validate()?;
    let c = stress.direction()?;
    let mut plan = Plan { base_loss: &set.loss, continuous: Vec::new(), indicators: Vec::new(), diagnostics: BTreeMap::new() };
    for k in 0..dm.r() - 1 {
        let p = dm.cumulative[k];
        let speed = stress.deriv_kinv(p)?;
        if speed == 0.0 {
            continue;
        }
        let side = if c > 0.0 { k } else { k + 1 } as u32;
        let rows: Vec<usize> = (0..set.len()).filter(|&r| set.index[r] == side).collect();
        if rows.is_empty() {
            return Err(Error::EmptyEvent(format!("support value {} has no simulated scenarios", dm.support[side as usize])));
        }
        let loss: Vec<f64> = rows.iter().map(|&r| set.loss[r]).collect();
        let jump = rows.iter().map(|&r| if c > 0.0 { set.loss[r] - set.loss_up[r] } else { set.loss_down[r] - set.loss[r] }).collect();
        plan.indicators.push(IndicatorTerm {
            label: format!("p{}", k + 1),
            direction: c,
            density: 1.0,
            weight: vec![speed; loss.len()],
            loss,
            jump,
        });
    }
    if plan.indicators.is_empty() {
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("quantile".into(), f64::NAN);
        return Ok(SensitivityEstimate {
            value: 0.0,
            stderr: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            n_bootstrap: 0,
            n_effective: 0,
            decomposition: None,
            diagnostics,
        });
    }
    plan.run(rm, band, boot, false)
}

/// v(p) = φ(Φ⁻¹(p)) / (1 − α), zero at the ends.
fn wang_weight(p: f64, alpha: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        norm_pdf(norm_quantile(p)) / (1.0 - alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha {alpha} must lie in (0, 1)")))
    }
}

/// Mean, stderr and a normal 95% interval of i.i.d. per-scenario contributions.
fn iid_estimate(values: &[f64], diagnostics: BTreeMap<String, f64>, n_effective: usize) -> SensitivityEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let se = (var / n).sqrt();
    SensitivityEstimate {
        value: mean,
        stderr: se,
        ci_low: mean - 1.96 * se,
        ci_high: mean + 1.96 * se,
        n_bootstrap: 0,
        n_effective,
        decomposition: None,
        diagnostics,
    }
}

fn compound_frequency_levels(dm: &DiscreteModelSpec) -> Result<usize> {
    if !matches!(dm.aggregation, Aggregation::CompoundSum) {
        return Err(invalid("the closed form needs a compound-sum model"));
    }
    if dm.support.iter().enumerate().any(|(k, w)| *w != k as f64) {
        return Err(invalid("the closed form needs frequency support 0, 1, …, d"));
    }
    Ok(dm.r() - 1)
}

fn headline(set: &DiscreteScenarioSet, alpha: f64) -> Result<(f64, f64, BTreeMap<String, f64>)> {
    let q = empirical_quantile(&set.loss, alpha)?;
    let es = es_at(&set.loss, alpha, q);
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("quantile".into(), q);
    diagnostics.insert("expected_shortfall".into(), es);
    Ok((q, es, diagnostics))
}

/// ES sensitivity to the frequency of a compound sum under the Wang stress,
/// as a weighted sum of stop-loss premiums of partial sums.
///
/// The quantile and ES come from `set`; the stop-loss premiums from a separate
/// pass of `set.len()` severity paths of full length.
pub fn compound_freq_sens(dm: &DiscreteModelSpec, set: &DiscreteScenarioSet, alpha: f64) -> Result<SensitivityEstimate> {
    dm.validate()?;
    check_set(dm, set)?;
    check_alpha(alpha)?;
    let d = compound_frequency_levels(dm)?;
    let (q, es, mut diagnostics) = headline(set, alpha)?;
    // coef[k-1] multiplies E[(Y_1 + … + Y_k − q)₊].
    let coef: Vec<f64> = (1..=d).map(|k| wang_weight(dm.cumulative[k - 1], alpha) - wang_weight(dm.cumulative[k], alpha)).collect();
    let chunks = par_chunks(set.len(), set.seed, domain::COMPOUND, |s, rows| {
        let mut out = Vec::with_capacity(rows.len());
        for _ in rows {
            let (mut sum, mut acc) = (0.0, 0.0);
            for c in &coef {
                sum += dm.severity.quantile(s.uniform())?;
                acc += c * (sum - q).max(0.0);
            }
            out.push(acc);
        }
        Ok(out)
    })?;
    let values: Vec<f64> = chunks.into_iter().flatten().collect();
    let est = iid_estimate(&values, BTreeMap::new(), values.len());
    diagnostics.insert("scaled".into(), est.value / es);
    Ok(SensitivityEstimate { diagnostics, ..est })
}

/// ES sensitivity to all severities under the same Wang stress:
/// E[1{T > q} Σ_{ℓ≤W} v(U_ℓ)/f_Y(Y_ℓ)].
pub fn compound_sev_sens(dm: &DiscreteModelSpec, set: &DiscreteScenarioSet, alpha: f64) -> Result<SensitivityEstimate> {
    dm.validate()?;
    check_set(dm, set)?;
    check_alpha(alpha)?;
    if !matches!(dm.aggregation, Aggregation::CompoundSum) {
        return Err(invalid("severity sensitivity needs a compound-sum model"));
    }
    let (q, es, mut diagnostics) = headline(set, alpha)?;
    let mut tail = 0;
    let mut values = Vec::with_capacity(set.len());
    for (l, w) in set.loss.iter().zip(&set.severity_weight) {
        if *l > q {
            if w.is_nan() {
                return Err(invalid("severity sensitivity needs a severity with a density"));
            }
            tail += 1;
            values.push(w / (1.0 - alpha));
        } else {
            values.push(0.0);
        }
    }
    let est = iid_estimate(&values, BTreeMap::new(), tail);
    diagnostics.insert("scaled".into(), est.value / es);
    Ok(SensitivityEstimate { diagnostics, ..est })
}
