//! Stress-function families: the deformation κ_ε, its inverse, the
//! ε-derivatives at zero of both (`K`, `Kinv`) and the direction constant.

use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{domain, invalid, numerical, Error, Result};
use crate::special::{newton_bisect, norm_cdf, norm_pdf, norm_quantile};

/// Default validity neighbourhood used by [`StressSpec::check_grid`].
pub const DEFAULT_EPS0: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StressSpec {
    Additive {
        beta: f64,
    },
    /// Defined on the non-negative half-line.
    Proportional {
        beta: f64,
    },
    Probability {
        beta: f64,
        marginal: DistributionSpec,
    },
    Mixture {
        base: DistributionSpec,
        alternative: DistributionSpec,
    },
    TailUpper {
        t: f64,
    },
    TailLower {
        t: f64,
    },
    /// Acts on uniforms in (0, 1).
    Wang {
        sign: i8,
    },
}

impl StressSpec {
    pub fn name(&self) -> &'static str {
        match self {
            StressSpec::Additive { .. } => "additive",
            StressSpec::Proportional { .. } => "proportional",
            StressSpec::Probability { .. } => "probability",
            StressSpec::Mixture { .. } => "mixture",
            StressSpec::TailUpper { .. } => "tail_upper",
            StressSpec::TailLower { .. } => "tail_lower",
            StressSpec::Wang { .. } => "wang",
        }
    }

    /// Parameter checks, including the pointwise cdf ordering of a mixture.
    pub fn validate(&self) -> Result<()> {
        match self {
            StressSpec::Additive { beta } | StressSpec::Proportional { beta } => check_beta(*beta),
            StressSpec::Probability { beta, marginal } => {
                check_beta(*beta)?;
                marginal.validate()?;
                if marginal.is_discrete() {
                    return Err(invalid("probability stress needs a continuous marginal"));
                }
                Ok(())
            }
            StressSpec::Mixture { base, alternative } => {
                base.validate()?;
                alternative.validate()?;
                if base.is_discrete() || alternative.is_discrete() {
                    return Err(invalid("mixture stress needs continuous distributions"));
                }
                mixture_ordering(base, alternative).map(|_| ())
            }
            StressSpec::TailUpper { t } | StressSpec::TailLower { t } => {
                if t.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("tail stress threshold must be finite"))
                }
            }
            StressSpec::Wang { sign } => {
                if *sign == 1 || *sign == -1 {
                    Ok(())
                } else {
                    Err(invalid(format!("wang sign must be +1 or -1, got {sign}")))
                }
            }
        }
    }

    /// Largest ε for which κ_ε is a valid stress (exclusive when finite and proportional).
    pub fn max_eps(&self) -> f64 {
        match *self {
            StressSpec::Proportional { beta } if beta < 0.0 => 1.0 / beta.abs(),
            StressSpec::Mixture { .. } => 1.0,
            _ => f64::INFINITY,
        }
    }

    pub(crate) fn check_eps(&self, eps: f64) -> Result<()> {
        let max = self.max_eps();
        let ok = eps >= 0.0
            && eps.is_finite()
            && match self {
                StressSpec::Proportional { .. } => eps < max,
                _ => eps <= max,
            };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("eps {eps} outside the validity neighbourhood of the {} stress", self.name())))
        }
    }

    /// Whether `x` lies in the domain on which the stress acts.
    pub fn in_domain(&self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match self {
            StressSpec::Proportional { .. } => x >= 0.0,
            StressSpec::Wang { .. } => x > 0.0 && x < 1.0,
            StressSpec::Probability { marginal, .. } => {
                matches!(marginal.cdf(x), Ok(u) if u > 0.0 && u < 1.0)
            }
            StressSpec::Mixture { base, .. } => {
                matches!(base.cdf(x), Ok(u) if u > 0.0 && u < 1.0)
            }
            _ => true,
        }
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(domain(format!("{x} outside the domain of the {} stress", self.name())))
        }
    }

    /// κ_ε(x).
    pub fn apply(&self, eps: f64, x: f64) -> Result<f64> {
        self.check_eps(eps)?;
        self.check_domain(x)?;
        if eps == 0.0 {
            return Ok(x);
        }
        Ok(match self {
            StressSpec::Additive { beta } => x + beta * eps,
            StressSpec::Proportional { beta } => x * (1.0 + beta * eps),
            StressSpec::Probability { beta, marginal } => {
                let u = marginal.cdf(x)? + beta * eps;
                if !(u > 0.0 && u < 1.0) {
                    return Err(domain(format!("probability stress moves F(x) to {u}, outside (0, 1)")));
                }
                marginal.quantile(u)?
            }
            StressSpec::Mixture { base, alternative } => mixture_quantile(base, alternative, eps, base.cdf(x)?, x)?,
            StressSpec::TailUpper { t } => {
                if x >= *t {
                    x + eps * (x - t)
                } else {
                    x
                }
            }
            StressSpec::TailLower { t } => {
                if x <= *t {
                    x + eps * (x - t)
                } else {
                    x
                }
            }
            StressSpec::Wang { sign } => norm_cdf(norm_quantile(x) + f64::from(*sign) * eps),
        })
    }

    /// κ_ε⁻¹(y).
    pub fn inverse_apply(&self, eps: f64, y: f64) -> Result<f64> {
        self.check_eps(eps)?;
        if eps == 0.0 {
            self.check_domain(y)?;
            return Ok(y);
        }
        let x = match self {
            StressSpec::Additive { beta } => y - beta * eps,
            StressSpec::Proportional { beta } => y / (1.0 + beta * eps),
            StressSpec::Probability { beta, marginal } => {
                let u = marginal.cdf(y)? - beta * eps;
                if !(u > 0.0 && u < 1.0) {
                    return Err(domain(format!("{y} outside the range of the probability stress")));
                }
                marginal.quantile(u)?
            }
            StressSpec::Mixture { base, alternative } => {
                let u = (1.0 - eps) * base.cdf(y)? + eps * alternative.cdf(y)?;
                if !(u > 0.0 && u < 1.0) {
                    return Err(domain(format!("{y} outside the range of the mixture stress")));
                }
                base.quantile(u)?
            }
            StressSpec::TailUpper { t } => {
                if y >= *t {
                    t + (y - t) / (1.0 + eps)
                } else {
                    y
                }
            }
            StressSpec::TailLower { t } => {
                if y <= *t {
                    t + (y - t) / (1.0 + eps)
                } else {
                    y
                }
            }
            StressSpec::Wang { sign } => {
                if !(y > 0.0 && y < 1.0) {
                    return Err(domain(format!("{y} outside (0, 1)")));
                }
                norm_cdf(norm_quantile(y) - f64::from(*sign) * eps)
            }
        };
        self.check_domain(x)?;
        Ok(x)
    }

    /// ∂κ_ε(x)/∂ε at ε = 0.
    pub fn deriv_k(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match self {
            StressSpec::Additive { beta } => *beta,
            StressSpec::Proportional { beta } => beta * x,
            StressSpec::Probability { beta, marginal } => beta / positive_density(marginal, x)?,
            StressSpec::Mixture { base, alternative } => (base.cdf(x)? - alternative.cdf(x)?) / positive_density(base, x)?,
            StressSpec::TailUpper { t } => (x - t).max(0.0),
            StressSpec::TailLower { t } => -(t - x).max(0.0),
            StressSpec::Wang { sign } => f64::from(*sign) * norm_pdf(norm_quantile(x)),
        })
    }

    /// ∂κ_ε⁻¹(x)/∂ε at ε = 0; the negative of [`Self::deriv_k`] for every family.
    pub fn deriv_kinv(&self, x: f64) -> Result<f64> {
        self.deriv_k(x).map(|k| -k)
    }

    /// The global sign of κ_ε(x) − x.
    pub fn direction(&self) -> Result<f64> {
        match self {
            StressSpec::Additive { beta } | StressSpec::Proportional { beta } | StressSpec::Probability { beta, .. } => {
                check_beta(*beta)?;
                Ok(beta.signum())
            }
            StressSpec::Mixture { base, alternative } => mixture_ordering(base, alternative),
            StressSpec::TailUpper { .. } => Ok(1.0),
            StressSpec::TailLower { .. } => Ok(-1.0),
            StressSpec::Wang { sign } => {
                self.validate()?;
                Ok(f64::from(*sign))
            }
        }
    }

    /// Checks invertibility, monotonicity, the limit at zero and sign constancy of
    /// κ_ε on the points `xs` for ε on a grid in (0, eps0].
    pub fn check_grid(&self, xs: &[f64], eps0: f64) -> Result<()> {
        self.validate()?;
        let c = self.direction()?;
        let eps0 = eps0.min(self.max_eps() * 0.5);
        let eps_grid: Vec<f64> = (1..=10).map(|k| eps0 * k as f64 / 10.0).collect();
        let xs: Vec<f64> = xs.iter().copied().filter(|&x| self.in_domain(x)).collect();
        for &eps in &eps_grid {
            let mut prev: Option<(f64, f64)> = None;
            for &x in &xs {
                let y = self.apply(eps, x)?;
                let back = self.inverse_apply(eps, y)?;
                if (back - x).abs() > 1e-9 * x.abs().max(1.0) {
                    return Err(Error::Assumption(format!("κ_ε not invertible at x={x}, eps={eps}")));
                }
                let d = y - x;
                if d != 0.0 && d.signum() != c {
                    return Err(Error::Assumption(format!("κ_ε(x) − x has sign {} at x={x}", d.signum())));
                }
                if let Some((px, py)) = prev {
                    if x > px && y < py {
                        return Err(Error::Assumption(format!("κ_ε not monotone near x={x}")));
                    }
                }
                prev = Some((x, y));
            }
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta != 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("stress beta must be finite and non-zero, got {beta}")))
    }
}

fn positive_density(d: &DistributionSpec, x: f64) -> Result<f64> {
    let f = d.pdf(x)?;
    if f > 0.0 && f.is_finite() {
        Ok(f)
    } else {
        Err(numerical(format!("density {f} at {x} is not strictly positive")))
    }
}

/// Direction of the mixture stress: +1 when G ≤ F everywhere, −1 when G ≥ F.
fn mixture_ordering(base: &DistributionSpec, alternative: &DistributionSpec) -> Result<f64> {
    const TOL: f64 = 1e-12;
    let mut levels: Vec<f64> = (0..1001).map(|k| (k as f64 + 0.5) / 1001.0).collect();
    levels.push(1e-6);
    levels.push(1.0 - 1e-6);
    let (mut below, mut above) = (true, true);
    for p in levels {
        let x = base.quantile(p)?;
        let diff = alternative.cdf(x)? - p;
        below &= diff <= TOL;
        above &= diff >= -TOL;
    }
    match (below, above) {
        (true, _) => Ok(1.0),
        (false, true) => Ok(-1.0),
        (false, false) => Err(invalid("mixture stress cdfs cross; no consistent direction")),
    }
}

/// Solves (1 − ε)F(y) + εG(y) = u, starting near `x0`.
fn mixture_quantile(base: &DistributionSpec, alt: &DistributionSpec, eps: f64, u: f64, x0: f64) -> Result<f64> {
    let other = alt.quantile(u)?;
    let (lo, hi) = if other < x0 { (other, x0) } else { (x0, other) };
    if hi - lo <= 1e-15 * hi.abs().max(1.0) {
        return Ok(x0);
    }
    let f = |y: f64| -> (f64, f64) {
        let v = (1.0 - eps) * base.cdf(y).unwrap_or(f64::NAN) + eps * alt.cdf(y).unwrap_or(f64::NAN) - u;
        let d = (1.0 - eps) * base.pdf(y).unwrap_or(f64::NAN) + eps * alt.pdf(y).unwrap_or(f64::NAN);
        (v, d)
    };
    // Tiny widening guards against the bracket ends solving exactly.
    let pad = 1e-12 * hi.abs().max(1.0);
    newton_bisect(f, lo - pad, hi + pad, x0, 1e-15, 300).ok_or_else(|| numerical("mixture stress inversion did not converge"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::lognormal_from_mean_cov;

    #[test]
    fn table_examples() {
        let add = StressSpec::Additive { beta: 2.0 };
        assert_eq!(add.apply(0.5, 1.0).unwrap(), 2.0);
        assert_eq!(add.inverse_apply(0.5, 2.0).unwrap(), 1.0);
        assert_eq!(add.deriv_kinv(0.3).unwrap(), -2.0);
        let up = StressSpec::TailUpper { t: 1.0 };
        assert!((up.apply(0.1, 3.0).unwrap() - 3.2).abs() < 1e-15);
        assert_eq!(up.deriv_k(3.0).unwrap(), 2.0);
        assert_eq!(up.direction().unwrap(), 1.0);
        let low = StressSpec::TailLower { t: 1.0 };
        assert_eq!(low.deriv_kinv(0.0).unwrap(), 1.0);
        assert_eq!(low.direction().unwrap(), -1.0);
        assert_eq!(StressSpec::Additive { beta: -3.0 }.direction().unwrap(), -1.0);
        let wang = StressSpec::Wang { sign: 1 };
        assert!((wang.deriv_k(0.5).unwrap() - 0.398_942_3).abs() < 1e-7);
    }

    #[test]
    fn wang_inverse_is_shift_back() {
        let w = StressSpec::Wang { sign: 1 };
        let y = 0.37;
        let expect = norm_cdf(norm_quantile(y) - 0.2);
        assert!((w.inverse_apply(0.2, y).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_eps_is_identity() {
        let ln = lognormal_from_mean_cov(100.0, 0.2).unwrap();
        let stresses = [
            StressSpec::Additive { beta: 1.0 },
            StressSpec::Proportional { beta: 1.0 },
            StressSpec::Probability { beta: 1.0, marginal: ln.clone() },
            StressSpec::Mixture { base: ln.clone(), alternative: lognormal_from_mean_cov(110.0, 0.2).unwrap() },
            StressSpec::TailUpper { t: 100.0 },
            StressSpec::TailLower { t: 100.0 },
        ];
        for s in &stresses {
            assert_eq!(s.apply(0.0, 104.5).unwrap(), 104.5);
        }
        assert_eq!(StressSpec::Wang { sign: -1 }.apply(0.0, 0.25).unwrap(), 0.25);
    }

    #[test]
    fn identical_mixture_has_zero_speed() {
        let ln = lognormal_from_mean_cov(100.0, 0.2).unwrap();
        let s = StressSpec::Mixture { base: ln.clone(), alternative: ln };
        assert_eq!(s.deriv_k(97.0).unwrap(), 0.0);
    }

    #[test]
    fn mixture_direction_follows_dominance() {
        let base = lognormal_from_mean_cov(100.0, 0.2).unwrap();
        let higher = lognormal_from_mean_cov(120.0, 0.2).unwrap();
        let s = StressSpec::Mixture { base: base.clone(), alternative: higher.clone() };
        assert_eq!(s.direction().unwrap(), 1.0);
        let s = StressSpec::Mixture { base: higher, alternative: base.clone() };
        assert_eq!(s.direction().unwrap(), -1.0);
        let crossing = lognormal_from_mean_cov(100.0, 0.5).unwrap();
        let s = StressSpec::Mixture { base, alternative: crossing };
        assert!(s.direction().is_err());
        assert!(s.validate().is_err());
    }

    #[test]
    fn probability_stress_refuses_to_clamp() {
        let s = StressSpec::Probability { beta: 1.0, marginal: DistributionSpec::Uniform01 };
        assert!(s.apply(0.2, 0.9).is_err());
        assert_eq!(s.apply(0.2, 0.5).unwrap(), 0.5 + 0.2);
    }

    #[test]
    fn zero_beta_rejected() {
        assert!(StressSpec::Additive { beta: 0.0 }.validate().is_err());
        assert!(StressSpec::Wang { sign: 0 }.validate().is_err());
    }

    #[test]
    fn proportional_eps_bound() {
        let s = StressSpec::Proportional { beta: -2.0 };
        assert!(s.apply(0.4, 1.0).is_ok());
        assert!(s.apply(0.5, 1.0).is_err());
        assert!(s.apply(0.1, -1.0).is_err());
    }

    #[test]
    fn serde_shape() {
        let s: StressSpec = serde_json::from_str(r#"{"type":"tail_upper","t":1.5}"#).unwrap();
        assert_eq!(s, StressSpec::TailUpper { t: 1.5 });
        assert!(serde_json::from_str::<StressSpec>(r#"{"type":"tail_upper","x":1.5}"#).is_err());
    }
}
