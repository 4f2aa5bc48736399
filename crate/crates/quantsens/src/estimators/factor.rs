//! Marginal and cascade sensitivities of the indicator loss model to one
//! continuous factor.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::plan::{run_many, ContinuousTerm, IndicatorTerm, Plan};
use super::{BandSpec, BootstrapSpec, RiskMeasureSpec, SensitivityEstimate};
use crate::error::{invalid, numerical, Error, Result};
use crate::model::{Factor, LossModel, ScenarioSet};
use crate::rng::{SeedSpec, CHUNK_ROWS};
use crate::stress::StressSpec;

/// Scenarios with U_j = F_j(X_j) uniform on (p_j − δ, p_j + δ), p_j = F_j(d_j),
/// and every other coordinate drawn from its conditional law.
pub fn conditional_scenarios(model: &LossModel, j: usize, band: &BandSpec, n: usize, seed: SeedSpec) -> Result<ScenarioSet> {
    if j >= model.m() {
        return Err(invalid(format!("indicator index {j} out of range")));
    }
    let p = model.spec.x_marginals[j].cdf(model.spec.thresholds[j])?;
    // The band is open, so an edge landing on 0 or 1 (δ = p) still leaves a
    // symmetric window; the tolerance absorbs rounding in F(F⁻¹(p)).
    let slack = 1e-12;
    if !(band.delta > 0.0 && p - band.delta > -slack && p + band.delta < 1.0 + slack) {
        return Err(invalid(format!("band of half-width {} does not fit around level {p}", band.delta)));
    }
    let (lo, hi) = ((p - band.delta).max(0.0), (p + band.delta).min(1.0));
    model.simulate_given(j, lo, hi, n, seed)
}

/// Conditional datasets keyed by indicator index, all built with one band.
#[derive(Clone, Debug, Default)]
pub struct ConditionalSets {
    pub delta: f64,
    pub sets: BTreeMap<usize, ScenarioSet>,
}

impl ConditionalSets {
    pub fn new(delta: f64) -> Self {
        ConditionalSets { delta, sets: BTreeMap::new() }
    }

    pub fn generate(model: &LossModel, indices: &[usize], band: &BandSpec, n: usize, seed: SeedSpec) -> Result<Self> {
        let mut out = ConditionalSets::new(band.delta);
        for &j in indices {
            if let std::collections::btree_map::Entry::Vacant(slot) = out.sets.entry(j) {
                slot.insert(conditional_scenarios(model, j, band, n, seed)?);
            }
        }
        Ok(out)
    }

    /// Indicator indices whose conditional datasets an estimate needs.
    pub fn required(model: &LossModel, target: Factor, cascade: bool) -> Result<Vec<usize>> {
        let t = target.coord(model.m(), model.n())?;
        let mut out: Vec<usize> = match target {
            Factor::X(i) => vec![i],
            Factor::Z(_) => vec![],
        };
        if cascade {
            out.extend(model.dependence.dependents(t).into_iter().filter(|&k| k < model.m()));
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    fn get(&self, model: &LossModel, band: &BandSpec, j: usize) -> Result<&ScenarioSet> {
        if self.delta != band.delta {
            return Err(invalid(format!("conditional datasets were built with delta {} but the estimate uses {}", self.delta, band.delta)));
        }
        let set = self.sets.get(&j).ok_or_else(|| invalid(format!("no conditional dataset for X{}", j + 1)))?;
        model.check_scenarios(set)?;
        Ok(set)
    }
}

/// Marginal sensitivity of `rm` to a stress of `target` alone.
#[allow(clippy::too_many_arguments)]
pub fn marginal_sens(
    model: &LossModel,
    base: &ScenarioSet,
    cond: &ConditionalSets,
    target: Factor,
    stress: &StressSpec,
    rm: &RiskMeasureSpec,
    band: &BandSpec,
    boot: &BootstrapSpec,
) -> Result<SensitivityEstimate> {
    let plan = build_plan(model, base, cond, target, stress, band, false)?;
    plan.run(rm, band, boot, false)
}

/// [`marginal_sens`] for several targets on one base sample. Bootstrap
/// resamples of the base are shared, so the estimates are correlated; each is
/// still a valid marginal estimate.
pub fn marginal_sens_batch(
    model: &LossModel,
    base: &ScenarioSet,
    cond: &ConditionalSets,
    targets: &[(Factor, StressSpec)],
    rm: &RiskMeasureSpec,
    band: &BandSpec,
    boot: &BootstrapSpec,
) -> Result<Vec<SensitivityEstimate>> {
    let plans =
        targets.iter().map(|(target, stress)| build_plan(model, base, cond, *target, stress, band, false)).collect::<Result<Vec<_>>>()?;
    run_many(&plans, rm, band, boot, false)
}

/// Cascade sensitivity: the stress of `target` propagates to every dependent
/// factor. The decomposition lists one contribution per affected factor.
#[allow(clippy::too_many_arguments)]
pub fn cascade_sens(
    model: &LossModel,
    base: &ScenarioSet,
    cond: &ConditionalSets,
    target: Factor,
    stress: &StressSpec,
    rm: &RiskMeasureSpec,
    band: &BandSpec,
    boot: &BootstrapSpec,
) -> Result<SensitivityEstimate> {
    let plan = build_plan(model, base, cond, target, stress, band, true)?;
    plan.run(rm, band, boot, true)
}

/// Speed weight, Ψ₁, loss without the jump and jump size of one conditional row.
type RowTerm = (f64, f64, f64, f64);

fn build_plan<'a>(
    model: &LossModel,
    base: &'a ScenarioSet,
    cond: &ConditionalSets,
    target: Factor,
    stress: &StressSpec,
    band: &BandSpec,
    cascade: bool,
) -> Result<Plan<'a>> {
    model.check_scenarios(base)?;
    stress.validate()?;
    let (m, n) = (model.m(), model.n());
    let t = target.coord(m, n)?;
    let mut coords = vec![t];
    if cascade {
        coords.extend(model.dependence.dependents(t));
    }
    let mut plan = Plan { base_loss: &base.loss, continuous: Vec::new(), indicators: Vec::new(), diagnostics: BTreeMap::new() };
    for &k in &coords {
        let f = Factor::from_coord(k, m);
        if matches!(f, Factor::X(_)) && !model.spec.general_mode {
            continue;
        }
        if let Some(h) = continuous_term(model, base, t, k, stress)? {
            plan.continuous.push(ContinuousTerm { label: f.to_string(), h });
        }
    }
    for &k in &coords {
        if k >= m {
            continue;
        }
        let set = cond.get(model, band, k)?;
        if let Some((term, agreement)) = indicator_term(model, set, t, k, stress)? {
            if k != t {
                plan.diagnostics.insert(format!("sign_agreement_X{}", k + 1), agreement);
            }
            plan.indicators.push(term);
        }
    }
    Ok(plan)
}

/// Row-wise Ψ₁: ∂(coordinate k)/∂(coordinate t) along the conditional-rank curve.
fn psi1_row(model: &LossModel, t: usize, k: usize, vt: f64, vk: f64, u: &[f64], y: &[f64]) -> Result<f64> {
    if k == t {
        return Ok(1.0);
    }
    let m = model.m();
    let slope = model.dependence.slope_uniform(t, k, u, y)?;
    if slope == 0.0 {
        return Ok(0.0);
    }
    let ft = model.spec.marginal(Factor::from_coord(t, m)).pdf(vt)?;
    let fk = model.spec.marginal(Factor::from_coord(k, m)).pdf(vk)?;
    if !(fk > 0.0) {
        return Err(numerical(format!("marginal density of {} underflows at {vk}", Factor::from_coord(k, m))));
    }
    Ok(slope * ft / fk)
}

/// h = K(target) · Ψ₁(t → k) · Σ_j ∂_k g_j · 1{X_j ≤ d_j}; None when identically zero.
fn continuous_term(model: &LossModel, base: &ScenarioSet, t: usize, k: usize, stress: &StressSpec) -> Result<Option<Vec<f64>>> {
    let (m, n) = (model.m(), model.n());
    let spec = &model.spec;
    let wrt = Factor::from_coord(k, m);
    let target = Factor::from_coord(t, m);
    let d = m + n;
    let scored = base.aux.scores.is_some();
    let rows: Vec<usize> = (0..base.len()).collect();
    let parts: Vec<Result<Vec<f64>>> = rows
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| {
            let (mut x, mut z) = (vec![0.0; m], vec![0.0; n]);
            let (mut u, mut y) = (vec![0.0; d], vec![0.0; if scored { d } else { 0 }]);
            let mut out = Vec::with_capacity(chunk.len());
            for &r in chunk {
                base.row(r, &mut x, &mut z);
                let mut dg = 0.0;
                for (j, g) in spec.g.iter().enumerate() {
                    if x[j] <= spec.thresholds[j] {
                        dg += g.partial(&x, &z, wrt);
                    }
                }
                if dg == 0.0 {
                    out.push(0.0);
                    continue;
                }
                let vt = base.value(target, r);
                let speed = stress.deriv_k(vt)?;
                if speed == 0.0 {
                    out.push(0.0);
                    continue;
                }
                base.latents(r, &mut u, &mut y);
                let psi = psi1_row(model, t, k, vt, base.value(wrt, r), &u, &y)?;
                out.push(speed * psi * dg);
            }
            Ok(out)
        })
        .collect();
    let mut h = Vec::with_capacity(base.len());
    for p in parts {
        h.extend(p?);
    }
    Ok(h.iter().any(|v| *v != 0.0).then_some(h))
}

/// Share of nonzero entries with the majority sign needed to call the sign constant.
const SIGN_AGREEMENT: f64 = 0.999;

/// Jump term of indicator `j` under a stress of coordinate `t`, estimated on the
/// dataset conditioned on X_j ≈ d_j. Returns the term and the sign agreement.
fn indicator_term(model: &LossModel, set: &ScenarioSet, t: usize, j: usize, stress: &StressSpec) -> Result<Option<(IndicatorTerm, f64)>> {
    let (m, n) = (model.m(), model.n());
    let spec = &model.spec;
    let target = Factor::from_coord(t, m);
    let c = stress.direction()?;
    let dj = spec.thresholds[j];
    let d = m + n;
    let scored = set.aux.scores.is_some();
    // The self term uses the speed at the threshold itself.
    let self_weight = if t == j { Some(stress.deriv_kinv(dj)?) } else { None };
    let rows: Vec<usize> = (0..set.len()).collect();
    let parts: Vec<Result<Vec<RowTerm>>> = rows
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| {
            let (mut x, mut z) = (vec![0.0; m], vec![0.0; n]);
            let (mut u, mut y) = (vec![0.0; d], vec![0.0; if scored { d } else { 0 }]);
            let mut out = Vec::with_capacity(chunk.len());
            for &r in chunk {
                set.row(r, &mut x, &mut z);
                let g = spec.g[j].eval(&x, &z);
                let (weight, psi) = match self_weight {
                    Some(w) => (w, 1.0),
                    None => {
                        set.latents(r, &mut u, &mut y);
                        let vt = set.value(target, r);
                        let psi = psi1_row(model, t, j, vt, x[j], &u, &y)?;
                        if psi == 0.0 {
                            (0.0, 0.0)
                        } else {
                            (stress.deriv_kinv(vt)? * psi, psi)
                        }
                    }
                };
                let without = set.loss[r] - if x[j] <= dj { g } else { 0.0 };
                out.push((weight, psi, without, g));
            }
            Ok(out)
        })
        .collect();
    let mut rows_out = Vec::with_capacity(set.len());
    for p in parts {
        rows_out.extend(p?);
    }
    let (sign, agreement) = if t == j {
        (1.0, 1.0)
    } else {
        let (mut pos, mut neg) = (0usize, 0usize);
        for (w, psi, _, _) in &rows_out {
            if *w != 0.0 {
                if *psi > 0.0 {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
        let total = pos + neg;
        if total == 0 {
            return Ok(None);
        }
        let share = pos.max(neg) as f64 / total as f64;
        if share < SIGN_AGREEMENT {
            return Err(Error::Assumption(format!(
                "the cascade moves X{} in both directions: {:.3}% of conditional scenarios disagree with the majority sign",
                j + 1,
                100.0 * (1.0 - share)
            )));
        }
        (if pos >= neg { 1.0 } else { -1.0 }, share)
    };
    let cj = c * sign;
    // Scenarios on the side the stress moves away from: defaulted when the
    // driver moves up, not defaulted when it moves down.
    let term = IndicatorTerm {
        label: format!("X{}", j + 1),
        direction: cj,
        density: spec.x_marginals[j].pdf(dj)?,
        loss: rows_out.iter().map(|(_, _, l, g)| if cj > 0.0 { l + g } else { *l }).collect(),
        jump: rows_out.iter().map(|r| r.3).collect(),
        weight: rows_out.iter().map(|r| r.0).collect(),
    };
    Ok(Some((term, agreement)))
}
