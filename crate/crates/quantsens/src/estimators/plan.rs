//! Estimators reduced to per-scenario vectors so that the point estimate and
//! every bootstrap replicate share one evaluation routine.

use std::collections::BTreeMap;

use super::{band_quantiles, bootstrap, quantile_rank, spacing_density, BandSpec, BootstrapSpec};
use super::{RiskMeasureSpec, SensitivityEstimate};
use crate::error::{Error, Result};

/// A smooth contribution E[h | loss event] over the base scenarios.
pub(crate) struct ContinuousTerm {
    pub label: String,
    pub h: Vec<f64>,
}

/// A jump contribution estimated on its own conditional dataset.
///
/// `loss` is the scenario loss on the side of the threshold the stress moves
/// away from; `jump` the size of the jump, `weight` the per-row speed factor.
pub(crate) struct IndicatorTerm {
    pub label: String,
    pub direction: f64,
    pub density: f64,
    pub loss: Vec<f64>,
    pub jump: Vec<f64>,
    pub weight: Vec<f64>,
}

pub(crate) struct Plan<'a> {
    pub base_loss: &'a [f64],
    pub continuous: Vec<ContinuousTerm>,
    pub indicators: Vec<IndicatorTerm>,
    pub diagnostics: BTreeMap<String, f64>,
}

#[cfg(test)]
pub(crate) struct Evaluation {
    pub terms: Vec<f64>,
    pub n_effective: usize,
    pub quantile: Option<f64>,
    pub density: Option<f64>,
}

enum Rows<'a> {
    All(usize),
    Sample(&'a [usize]),
}

impl Rows<'_> {
    fn len(&self) -> usize {
        match self {
            Rows::All(n) => *n,
            Rows::Sample(s) => s.len(),
        }
    }

    fn for_each(&self, mut f: impl FnMut(usize)) {
        match self {
            Rows::All(n) => (0..*n).for_each(&mut f),
            Rows::Sample(s) => s.iter().copied().for_each(&mut f),
        }
    }
}

/// Loss event shared by every plan on one base sample.
struct Event {
    quantile: Option<f64>,
    density: Option<f64>,
    kind: EventKind,
}

enum EventKind {
    All,
    AtLeast(f64),
    Band(f64, f64),
}

impl Event {
    fn new(base_loss: &[f64], base: &Rows, rm: &RiskMeasureSpec, band: &BandSpec, need_density: bool) -> Result<Self> {
        if base.len() == 0 {
            return Err(Error::EmptyEvent("no base scenarios".into()));
        }
        let mut losses = Vec::with_capacity(base.len());
        base.for_each(|r| losses.push(base_loss[r]));
        Ok(match *rm {
            RiskMeasureSpec::Mean => Event { quantile: None, density: None, kind: EventKind::All },
            RiskMeasureSpec::Es { alpha } => {
                let k = quantile_rank(alpha, losses.len());
                let q = *losses.select_nth_unstable_by(k, f64::total_cmp).1;
                Event { quantile: Some(q), density: None, kind: EventKind::AtLeast(q) }
            }
            RiskMeasureSpec::Var { alpha } => {
                band.check_at(alpha)?;
                let (lo, q, hi) = band_quantiles(&mut losses, alpha, band.delta);
                let density = if need_density { Some(spacing_density(lo, hi, band.delta)?) } else { None };
                Event { quantile: Some(q), density, kind: EventKind::Band(lo, hi) }
            }
        })
    }

    fn contains(&self, l: f64) -> bool {
        match self.kind {
            EventKind::All => true,
            EventKind::AtLeast(q) => l >= q,
            EventKind::Band(lo, hi) => l > lo && l <= hi,
        }
    }
}

impl Plan<'_> {
    fn dataset_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.indicators.iter().map(|t| t.loss.len())
    }

    /// Term values given the event; `idx` holds one index set per indicator term.
    fn terms(&self, ev: &Event, rm: &RiskMeasureSpec, base: &Rows, idx: Option<&[Vec<usize>]>) -> Result<(Vec<f64>, usize)> {
        let mut terms = Vec::with_capacity(self.continuous.len() + self.indicators.len());
        let mut n_effective = 0;
        if !self.continuous.is_empty() {
            let mut sums = vec![0.0; self.continuous.len()];
            let mut count = 0usize;
            base.for_each(|r| {
                if ev.contains(self.base_loss[r]) {
                    count += 1;
                    for (s, t) in sums.iter_mut().zip(&self.continuous) {
                        *s += t.h[r];
                    }
                }
            });
            if count == 0 {
                return Err(Error::EmptyEvent(format!("no scenarios in the {} conditioning event", rm.name())));
            }
            n_effective += count;
            terms.extend(sums.iter().map(|s| s / count as f64));
        }

        for (i, t) in self.indicators.iter().enumerate() {
            let set = match idx {
                Some(sets) => Rows::Sample(&sets[i]),
                None => Rows::All(t.loss.len()),
            };
            if set.len() == 0 {
                return Err(Error::EmptyEvent(format!("no conditional scenarios for {}", t.label)));
            }
            n_effective += set.len();
            let c = t.direction;
            let mut acc = 0.0;
            match *rm {
                RiskMeasureSpec::Mean => set.for_each(|r| acc += t.weight[r] * t.jump[r]),
                RiskMeasureSpec::Es { .. } => {
                    let q = ev.quantile.expect("set for ES");
                    set.for_each(|r| {
                        let (l, g) = (t.loss[r], t.jump[r]);
                        acc += t.weight[r] * ((l - c * g - q).max(0.0) - (l - q).max(0.0));
                    })
                }
                RiskMeasureSpec::Var { .. } => {
                    let q = ev.quantile.expect("set for VaR");
                    set.for_each(|r| {
                        let (l, g) = (t.loss[r], t.jump[r]);
                        let moved = (l <= q + c * g) as i32 - (l <= q) as i32;
                        acc += t.weight[r] * moved as f64;
                    })
                }
            }
            let mean = acc / set.len() as f64;
            terms.push(match *rm {
                RiskMeasureSpec::Mean => t.density * mean,
                RiskMeasureSpec::Es { alpha } => -c * t.density / (1.0 - alpha) * mean,
                RiskMeasureSpec::Var { .. } => c * t.density / ev.density.expect("set when indicators exist") * mean,
            });
        }
        Ok((terms, n_effective))
    }

    #[cfg(test)]
    pub fn evaluate(&self, rm: &RiskMeasureSpec, band: &BandSpec, idx: Option<&[Vec<usize>]>) -> Result<Evaluation> {
        let base = match idx {
            Some(sets) => Rows::Sample(&sets[0]),
            None => Rows::All(self.base_loss.len()),
        };
        let ev = Event::new(self.base_loss, &base, rm, band, !self.indicators.is_empty())?;
        let (terms, n_effective) = self.terms(&ev, rm, &base, idx.map(|s| &s[1..]))?;
        Ok(Evaluation { terms, n_effective, quantile: ev.quantile, density: ev.density })
    }

    fn labels(&self) -> Vec<&str> {
        self.continuous.iter().map(|t| t.label.as_str()).chain(self.indicators.iter().map(|t| t.label.as_str())).collect()
    }

    /// Point estimate plus bootstrap uncertainty.
    pub fn run(&self, rm: &RiskMeasureSpec, band: &BandSpec, boot: &BootstrapSpec, decompose: bool) -> Result<SensitivityEstimate> {
        let mut out = run_many(std::slice::from_ref(self), rm, band, boot, decompose)?;
        Ok(out.pop().expect("one plan in, one estimate out"))
    }
}

/// Runs plans that share one base sample with common bootstrap resamples of it,
/// so the loss event is located once per replicate.
pub(crate) fn run_many(
    plans: &[Plan<'_>],
    rm: &RiskMeasureSpec,
    band: &BandSpec,
    boot: &BootstrapSpec,
    decompose: bool,
) -> Result<Vec<SensitivityEstimate>> {
    rm.validate()?;
    boot.validate()?;
    let Some(first) = plans.first() else {
        return Ok(Vec::new());
    };
    let base_loss = first.base_loss;
    if plans.iter().any(|p| !std::ptr::eq(p.base_loss, base_loss)) {
        return Err(crate::error::invalid("batched plans must share one base sample"));
    }
    let need_density = plans.iter().any(|p| !p.indicators.is_empty());
    // Dataset 0 is the base; each plan's indicator datasets follow in order.
    let mut offsets = Vec::with_capacity(plans.len());
    let mut sizes = vec![base_loss.len()];
    for p in plans {
        offsets.push(sizes.len());
        sizes.extend(p.dataset_sizes());
    }

    let all = Rows::All(base_loss.len());
    let ev = Event::new(base_loss, &all, rm, band, need_density)?;
    let points: Vec<(Vec<f64>, usize)> = plans.iter().map(|p| p.terms(&ev, rm, &all, None)).collect::<Result<_>>()?;

    // Per plan: total first, then the terms.
    let widths: Vec<usize> = points.iter().map(|(t, _)| t.len() + 1).collect();
    let summary = if boot.replicates == 0 {
        None
    } else {
        Some(bootstrap(&sizes, boot, |idx| {
            let base = Rows::Sample(&idx[0]);
            let ev = Event::new(base_loss, &base, rm, band, need_density)?;
            let mut out = Vec::with_capacity(widths.iter().sum());
            for (p, &off) in plans.iter().zip(&offsets) {
                let (terms, _) = p.terms(&ev, rm, &base, Some(&idx[off..off + p.indicators.len()]))?;
                out.push(terms.iter().sum());
                out.extend(terms);
            }
            Ok(out)
        })?)
    };

    let mut estimates = Vec::with_capacity(plans.len());
    let mut col = 0;
    for ((p, (point_terms, n_effective)), width) in plans.iter().zip(points).zip(widths) {
        let mut diagnostics = p.diagnostics.clone();
        if let Some(q) = ev.quantile {
            diagnostics.insert("quantile".into(), q);
        }
        if let Some(f) = ev.density {
            diagnostics.insert("loss_density".into(), f);
        }
        let (terms, value, stderr, ci_low, ci_high, n_boot) = match &summary {
            None => {
                let v: f64 = point_terms.iter().sum();
                (point_terms, v, 0.0, v, v, 0)
            }
            Some(s) => {
                diagnostics.insert("bootstrap_failures".into(), s.failures as f64);
                let terms = s.mean[col + 1..col + width].to_vec();
                let v: f64 = terms.iter().sum();
                (terms, v, s.stderr[col], s.ci_low[col].min(v), s.ci_high[col].max(v), s.replicates)
            }
        };
        col += width;
        let decomposition = decompose.then(|| merge_labels(&p.labels(), &terms));
        estimates.push(SensitivityEstimate {
            value,
            stderr,
            ci_low,
            ci_high,
            n_bootstrap: n_boot,
            n_effective,
            decomposition,
            diagnostics,
        });
    }
    Ok(estimates)
}

/// Sums terms sharing a label, keeping first-seen order.
fn merge_labels(labels: &[&str], values: &[f64]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for (l, v) in labels.iter().zip(values) {
        match out.iter_mut().find(|(k, _)| k == l) {
            Some((_, acc)) => *acc += v,
            None => out.push((l.to_string(), *v)),
        }
    }
    out
}
