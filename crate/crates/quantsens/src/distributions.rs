//! Univariate marginals. Sampling is always by inversion so that stressed and
//! base draws can share one uniform.

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::rng::{domain as dom, par_chunks, SeedSpec};
use crate::special::{norm_cdf, norm_pdf, norm_quantile, GammaFn};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Normal {
        mean: f64,
        sd: f64,
    },
    Uniform01,
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    StudentT {
        nu: u32,
        /// Rescale to unit variance.
        #[serde(default)]
        standardised: bool,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    /// Truncated at the left `truncation_quantile` and renormalised.
    NegativeBinomial {
        mean: f64,
        overdispersion: f64,
        truncation_quantile: f64,
    },
    InverseGamma {
        shape: f64,
        rate: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Eval {
    Cdf,
    Pdf,
    Quantile,
}

/// Lognormal with the given mean and coefficient of variation.
pub fn lognormal_from_mean_cov(mean: f64, cov: f64) -> Result<DistributionSpec> {
    if !(mean > 0.0 && mean.is_finite()) || !(cov > 0.0 && cov.is_finite()) {
        return Err(invalid(format!("lognormal mean {mean} and cov {cov} must be positive")));
    }
    let s2 = (cov * cov).ln_1p();
    Ok(DistributionSpec::Lognormal { mu: mean.ln() - 0.5 * s2, sigma: s2.sqrt() })
}

/// Probability table of a finitely supported distribution on `0..len`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTable {
    pub pmf: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl DiscreteTable {
    pub fn from_pmf(pmf: Vec<f64>) -> Self {
        let total: f64 = pmf.iter().sum();
        let pmf: Vec<f64> = pmf.iter().map(|p| p / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        DiscreteTable { pmf, cdf }
    }

    /// Smallest k with F(k) ≥ u.
    pub fn quantile(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn max_value(&self) -> usize {
        self.pmf.len() - 1
    }
}

fn nb_table(mean: f64, od: f64, trunc: f64) -> DiscreteTable {
    let p = 1.0 / od;
    let r = mean / (od - 1.0);
    let mut pmf = vec![(r * p.ln()).exp()];
    let mut cum = pmf[0];
    let mut k = 0usize;
    while cum < trunc {
        k += 1;
        let next = pmf[k - 1] * (k as f64 - 1.0 + r) / k as f64 * (1.0 - p);
        pmf.push(next);
        cum += next;
    }
    DiscreteTable::from_pmf(pmf)
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        use DistributionSpec::*;
        let ok = match *self {
            Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            Uniform01 => true,
            Lognormal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            StudentT { nu, .. } => nu >= 3,
            Gamma { shape, scale } => shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite(),
            NegativeBinomial { mean, overdispersion, truncation_quantile } => {
                mean > 0.0
                    && mean.is_finite()
                    && overdispersion > 1.0
                    && overdispersion.is_finite()
                    && truncation_quantile > 0.0
                    && truncation_quantile < 1.0
            }
            InverseGamma { shape, rate } => shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid distribution parameters: {self:?}")))
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, DistributionSpec::NegativeBinomial { .. })
    }

    /// Probability table for the discrete variants.
    pub fn table(&self) -> Option<DiscreteTable> {
        match *self {
            DistributionSpec::NegativeBinomial { mean, overdispersion, truncation_quantile } => {
                Some(nb_table(mean, overdispersion, truncation_quantile))
            }
            _ => None,
        }
    }

    fn t_scale(nu: u32, standardised: bool) -> f64 {
        if standardised {
            ((nu as f64 - 2.0) / nu as f64).sqrt()
        } else {
            1.0
        }
    }

    pub fn eval(&self, what: Eval, arg: f64) -> Result<f64> {
        match what {
            Eval::Cdf => self.cdf(arg),
            Eval::Pdf => self.pdf(arg),
            Eval::Quantile => self.quantile(arg),
        }
    }

    /// Values outside the support give 0 or 1.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        use DistributionSpec::*;
        if x.is_nan() {
            return Err(domain("cdf argument is NaN"));
        }
        Ok(match *self {
            Normal { mean, sd } => norm_cdf((x - mean) / sd),
            Uniform01 => x.clamp(0.0, 1.0),
            Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    norm_cdf((x.ln() - mu) / sigma)
                }
            }
            StudentT { nu, standardised } => crate::special::StudentT::new(nu as f64).cdf(x / Self::t_scale(nu, standardised)),
            Gamma { shape, scale } => GammaFn::new(shape).cdf(x / scale),
            NegativeBinomial { .. } => {
                if x < 0.0 {
                    0.0
                } else {
                    let table = self.table().expect("discrete");
                    let k = x.floor() as usize;
                    table.cdf[k.min(table.cdf.len() - 1)]
                }
            }
            InverseGamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    GammaFn::new(shape).sf(rate / x)
                }
            }
        })
    }

    /// Probability mass for the discrete variants.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        use DistributionSpec::*;
        if x.is_nan() {
            return Err(domain("pdf argument is NaN"));
        }
        Ok(match *self {
            Normal { mean, sd } => norm_pdf((x - mean) / sd) / sd,
            Uniform01 => {
                if (0.0..=1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    norm_pdf((x.ln() - mu) / sigma) / (sigma * x)
                }
            }
            StudentT { nu, standardised } => {
                let s = Self::t_scale(nu, standardised);
                crate::special::StudentT::new(nu as f64).pdf(x / s) / s
            }
            Gamma { shape, scale } => GammaFn::new(shape).pdf(x / scale) / scale,
            NegativeBinomial { .. } => {
                if x < 0.0 || x.fract() != 0.0 {
                    0.0
                } else {
                    let table = self.table().expect("discrete");
                    table.pmf.get(x as usize).copied().unwrap_or(0.0)
                }
            }
            InverseGamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    GammaFn::new(shape).pdf(rate / x) * rate / (x * x)
                }
            }
        })
    }

    /// Left-continuous inverse of the cdf.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        use DistributionSpec::*;
        if !(0.0..=1.0).contains(&p) {
            return Err(domain(format!("quantile level {p} outside [0, 1]")));
        }
        let bounded_below = matches!(self, Uniform01 | Lognormal { .. } | Gamma { .. } | NegativeBinomial { .. } | InverseGamma { .. });
        let bounded_above = matches!(self, Uniform01 | NegativeBinomial { .. });
        if (p == 0.0 && !bounded_below) || (p == 1.0 && !bounded_above) {
            return Err(domain(format!("quantile level {p} at an unbounded end of the support")));
        }
        Ok(match *self {
            Normal { mean, sd } => mean + sd * norm_quantile(p),
            Uniform01 => p,
            Lognormal { mu, sigma } => {
                if p == 0.0 {
                    0.0
                } else {
                    (mu + sigma * norm_quantile(p)).exp()
                }
            }
            StudentT { nu, standardised } => Self::t_scale(nu, standardised) * crate::special::StudentT::new(nu as f64).quantile(p),
            Gamma { shape, scale } => scale * GammaFn::new(shape).quantile(p),
            NegativeBinomial { .. } => self.table().expect("discrete").quantile(p) as f64,
            InverseGamma { shape, rate } => {
                if p == 0.0 {
                    0.0
                } else {
                    rate / GammaFn::new(shape).quantile(1.0 - p)
                }
            }
        })
    }

    /// Mean, where finite.
    pub fn mean(&self) -> Option<f64> {
        use DistributionSpec::*;
        match *self {
            Normal { mean, .. } => Some(mean),
            Uniform01 => Some(0.5),
            Lognormal { mu, sigma } => Some((mu + 0.5 * sigma * sigma).exp()),
            StudentT { .. } => Some(0.0),
            Gamma { shape, scale } => Some(shape * scale),
            NegativeBinomial { .. } => self.table().map(|t| t.mean()),
            InverseGamma { shape, rate } => (shape > 1.0).then(|| rate / (shape - 1.0)),
        }
    }

    /// `n` draws by inversion of chunk-seeded uniforms.
    pub fn sample(&self, n: usize, seed: SeedSpec) -> Result<Vec<f64>> {
        self.validate()?;
        let table = self.table();
        let chunks = par_chunks(n, seed, dom::SAMPLE, |s, rows| {
            rows.map(|_| {
                let u = s.uniform();
                match &table {
                    Some(t) => Ok(t.quantile(u) as f64),
                    None => self.quantile(u),
                }
            })
            .collect::<Result<Vec<_>>>()
        })?;
        Ok(chunks.concat())
    }
}

/// Uniforms consumed by [`DistributionSpec::sample`] for the same seed.
pub fn sample_uniforms(n: usize, seed: SeedSpec) -> Vec<f64> {
    par_chunks(n, seed, dom::SAMPLE, |s, rows| Ok(rows.map(|_| s.uniform()).collect::<Vec<_>>())).expect("infallible").concat()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn continuous_variants() -> Vec<DistributionSpec> {
        use DistributionSpec::*;
        vec![
            Normal { mean: 1.0, sd: 2.0 },
            Uniform01,
            Lognormal { mu: 4.6, sigma: 0.1 },
            StudentT { nu: 4, standardised: false },
            StudentT { nu: 5, standardised: true },
            Gamma { shape: 5.0, scale: 1.0 },
            Gamma { shape: 0.7, scale: 3.0 },
            InverseGamma { shape: 2.0, rate: 1.0 },
        ]
    }

    #[test]
    fn lognormal_conversion_matches_closed_form() {
        let DistributionSpec::Lognormal { mu, sigma } = lognormal_from_mean_cov(100.0, 0.1).unwrap() else { panic!() };
        assert!((mu - 4.600_195).abs() < 1e-6);
        assert!((sigma - 0.099_751_3).abs() < 1e-7);
        assert!(lognormal_from_mean_cov(0.0, 0.1).is_err());
        assert!(lognormal_from_mean_cov(1.0, -0.1).is_err());
    }

    #[test]
    fn lognormal_degenerate_limit() {
        let DistributionSpec::Lognormal { mu, sigma } = lognormal_from_mean_cov(1.0, 1e-9).unwrap() else { panic!() };
        assert!(mu.abs() < 1e-15 && sigma < 1e-8);
    }

    #[test]
    fn reference_values() {
        let n = DistributionSpec::Normal { mean: 0.0, sd: 1.0 };
        assert!((n.quantile(0.975).unwrap() - 1.959_964).abs() < 1e-6);
        assert_eq!(DistributionSpec::Uniform01.cdf(0.3).unwrap(), 0.3);
        assert!(n.quantile(0.0).is_err());
        assert!(n.quantile(1.0).is_err());
        assert!(n.quantile(1.5).is_err());
        assert!(n.cdf(f64::NAN).is_err());
    }

    #[test]
    fn quantile_cdf_roundtrip() {
        for d in continuous_variants() {
            for i in 1..200 {
                let p = i as f64 / 200.0;
                let x = d.quantile(p).unwrap();
                let x2 = d.quantile(d.cdf(x).unwrap()).unwrap();
                assert!((x - x2).abs() <= 1e-9 * x.abs().max(1.0), "{d:?} p={p} x={x} x2={x2}");
            }
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        for d in continuous_variants() {
            let lo = d.quantile(1e-9).unwrap();
            let hi = d.quantile(1.0 - 1e-9).unwrap();
            // Positive supports are integrated in log space to tame a pole at 0.
            let log_space = lo > 0.0;
            let (a, b) = if log_space { (lo.ln(), hi.ln()) } else { (lo, hi) };
            let steps = 200_000;
            let h = (b - a) / steps as f64;
            let mut total = 0.0;
            for k in 0..=steps {
                let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                let s = a + k as f64 * h;
                total += w * if log_space { d.pdf(s.exp()).unwrap() * s.exp() } else { d.pdf(s).unwrap() };
            }
            total *= h;
            assert!((total - (1.0 - 2e-9)).abs() < 1e-6, "{d:?} -> {total}");
        }
    }

    #[test]
    fn truncated_nb_sums_to_one_and_cuts_at_quantile() {
        let d = DistributionSpec::NegativeBinomial { mean: 5.0, overdispersion: 2.5, truncation_quantile: 0.999 };
        let t = d.table().unwrap();
        assert!((t.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(*t.cdf.last().unwrap(), 1.0);
        // Untruncated mean is 5; truncation removes a 0.1% tail.
        assert!(t.mean() < 5.0 && t.mean() > 4.9);
        assert_eq!(d.quantile(1.0).unwrap(), t.max_value() as f64);
        assert_eq!(d.quantile(t.cdf[3]).unwrap(), 3.0);
        assert!(d.quantile(t.cdf[3] + 1e-12).unwrap() == 4.0);
    }

    #[test]
    fn sampling_is_inverse_transform_of_uniforms() {
        let seed = SeedSpec(11);
        let d = DistributionSpec::Gamma { shape: 5.0, scale: 2.0 };
        let xs = d.sample(5000, seed).unwrap();
        let us = sample_uniforms(5000, seed);
        for (x, u) in xs.iter().zip(&us) {
            assert_eq!(*x, d.quantile(*u).unwrap());
        }
        assert_eq!(xs, d.sample(5000, seed).unwrap());
        assert_ne!(xs, d.sample(5000, SeedSpec(12)).unwrap());
    }

    #[test]
    fn serde_shape() {
        let json = r#"{"type":"student_t","nu":4,"standardised":true}"#;
        let d: DistributionSpec = serde_json::from_str(json).unwrap();
        assert_eq!(d, DistributionSpec::StudentT { nu: 4, standardised: true });
        assert!(serde_json::from_str::<DistributionSpec>(r#"{"type":"normal","mean":0,"sd":1,"x":1}"#).is_err());
        let u: DistributionSpec = serde_json::from_str(r#"{"type":"uniform01"}"#).unwrap();
        assert_eq!(u, DistributionSpec::Uniform01);
    }
}
