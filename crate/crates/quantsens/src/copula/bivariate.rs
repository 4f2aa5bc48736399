use serde::{Deserialize, Serialize};

use crate::distributions::DistributionSpec;
use crate::error::{domain, invalid, numerical, Result};
use crate::special::{newton_bisect, norm_cdf, norm_pdf, norm_quantile, StudentT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Clayton { theta: f64 },
    Gumbel { theta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BivariateCopulaSpec {
    Gaussian { r: f64 },
    StudentT { r: f64, nu: u32 },
    Archimedean { generator: GeneratorSpec },
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GeneratorSpec::Clayton { theta } if theta > 0.0 && theta.is_finite() => Ok(()),
            GeneratorSpec::Gumbel { theta } if theta >= 1.0 && theta.is_finite() => Ok(()),
            _ => Err(invalid(format!("generator parameter out of range: {self:?}"))),
        }
    }

    pub fn psi(&self, t: f64) -> f64 {
        match *self {
            GeneratorSpec::Clayton { theta } => (1.0 + t).powf(-1.0 / theta),
            GeneratorSpec::Gumbel { theta } => (-t.powf(1.0 / theta)).exp(),
        }
    }

    pub fn psi_inv(&self, u: f64) -> f64 {
        match *self {
            GeneratorSpec::Clayton { theta } => u.powf(-theta) - 1.0,
            GeneratorSpec::Gumbel { theta } => (-u.ln()).powf(theta),
        }
    }

    /// ψ̇(t) (negative).
    pub fn dpsi(&self, t: f64) -> f64 {
        -self.ln_neg_dpsi(t).exp()
    }

    /// ψ̈(t) (positive).
    pub fn ddpsi(&self, t: f64) -> f64 {
        self.dpsi(t) * self.dd_ratio(t)
    }

    /// ln(−ψ̇(t)), evaluated without forming ψ̇.
    pub fn ln_neg_dpsi(&self, t: f64) -> f64 {
        match *self {
            GeneratorSpec::Clayton { theta } => -theta.ln() - (1.0 / theta + 1.0) * t.ln_1p(),
            GeneratorSpec::Gumbel { theta } => {
                let a = 1.0 / theta;
                a.ln() + (a - 1.0) * t.ln() - t.powf(a)
            }
        }
    }

    /// ψ̈(t)/ψ̇(t) (negative).
    pub fn dd_ratio(&self, t: f64) -> f64 {
        match *self {
            GeneratorSpec::Clayton { theta } => -(1.0 / theta + 1.0) / (1.0 + t),
            GeneratorSpec::Gumbel { theta } => {
                let a = 1.0 / theta;
                -a * t.powf(a - 1.0) + (a - 1.0) / t
            }
        }
    }

    /// Solves ψ̇(s) = w for s ≥ `lower`, where w ≥ ψ̇(lower).
    ///
    /// Works on ln(−ψ̇), which is decreasing in s; Newton steps are safeguarded
    /// by bisection. Tolerance 1e-12 relative, at most 200 iterations.
    pub fn dpsi_inv(&self, ln_neg_w: f64, lower: f64) -> Result<f64> {
        let g = |s: f64| (ln_neg_w - self.ln_neg_dpsi(s), -self.dd_ratio(s));
        if g(lower).0 >= 0.0 {
            return Ok(lower);
        }
        let mut hi = (2.0 * lower).max(1.0);
        let mut expansions = 0;
        while g(hi).0 < 0.0 {
            hi *= 2.0;
            expansions += 1;
            if expansions > 2000 {
                return Err(numerical("generator derivative inverse: no upper bracket"));
            }
        }
        newton_bisect(g, lower, hi, 0.5 * (lower + hi), 1e-12, 200)
            .ok_or_else(|| numerical("generator derivative inverse did not converge within 200 iterations"))
    }

    pub fn kendall_tau(&self) -> f64 {
        match *self {
            GeneratorSpec::Clayton { theta } => theta / (theta + 2.0),
            GeneratorSpec::Gumbel { theta } => 1.0 - 1.0 / theta,
        }
    }
}

fn check_unit(u: f64, what: &str) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("{what} = {u} must lie strictly inside (0, 1)")))
    }
}

/// Scale of the conditional t law of the second score given the first.
#[inline]
fn t_cond_scale(nu: f64, r: f64, y: f64) -> f64 {
    ((nu + y * y) * (1.0 - r * r) / (nu + 1.0)).sqrt()
}

impl BivariateCopulaSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BivariateCopulaSpec::Gaussian { r } => check_corr(*r),
            BivariateCopulaSpec::StudentT { r, nu } => {
                check_corr(*r)?;
                if *nu >= 3 {
                    Ok(())
                } else {
                    Err(invalid(format!("t copula needs nu >= 3, got {nu}")))
                }
            }
            BivariateCopulaSpec::Archimedean { generator } => generator.validate(),
        }
    }

    pub fn kendall_tau(&self) -> f64 {
        match self {
            BivariateCopulaSpec::Gaussian { r } | BivariateCopulaSpec::StudentT { r, .. } => std::f64::consts::FRAC_2_PI * r.asin(),
            BivariateCopulaSpec::Archimedean { generator } => generator.kendall_tau(),
        }
    }

    /// C_{j|i}(uj | ui).
    pub fn cond_cdf(&self, uj: f64, ui: f64) -> Result<f64> {
        check_unit(ui, "conditioning uniform")?;
        check_unit(uj, "uniform")?;
        Ok(match self {
            BivariateCopulaSpec::Gaussian { r } => norm_cdf((norm_quantile(uj) - r * norm_quantile(ui)) / (1.0 - r * r).sqrt()),
            BivariateCopulaSpec::StudentT { r, nu } => {
                let nu = f64::from(*nu);
                let t = StudentT::new(nu);
                let (yi, yj) = (t.quantile(ui), t.quantile(uj));
                StudentT::new(nu + 1.0).cdf((yj - r * yi) / t_cond_scale(nu, *r, yi))
            }
            BivariateCopulaSpec::Archimedean { generator: g } => {
                let a = g.psi_inv(ui);
                let b = g.psi_inv(uj);
                (g.ln_neg_dpsi(a + b) - g.ln_neg_dpsi(a)).exp()
            }
        })
    }

    /// C⁻¹_{j|i}(v | ui).
    pub fn cond_inv(&self, v: f64, ui: f64) -> Result<f64> {
        check_unit(ui, "conditioning uniform")?;
        check_unit(v, "conditional level")?;
        Ok(match self {
            BivariateCopulaSpec::Gaussian { r } => norm_cdf(r * norm_quantile(ui) + (1.0 - r * r).sqrt() * norm_quantile(v)),
            BivariateCopulaSpec::StudentT { r, nu } => {
                let nu = f64::from(*nu);
                let t = StudentT::new(nu);
                let yi = t.quantile(ui);
                t.cdf(r * yi + t_cond_scale(nu, *r, yi) * StudentT::new(nu + 1.0).quantile(v))
            }
            BivariateCopulaSpec::Archimedean { generator: g } => {
                let a = g.psi_inv(ui);
                let s = g.dpsi_inv(v.ln() + g.ln_neg_dpsi(a), a)?;
                g.psi(s - a)
            }
        })
    }

    /// Moves `uj` to keep its conditional rank when the conditioning uniform
    /// moves from `ui` to `ui_new`.
    pub fn transport(&self, ui: f64, ui_new: f64, uj: f64) -> Result<f64> {
        if ui == ui_new {
            return Ok(uj);
        }
        match self {
            BivariateCopulaSpec::Gaussian { r } => {
                check_unit(ui, "conditioning uniform")?;
                check_unit(ui_new, "conditioning uniform")?;
                check_unit(uj, "uniform")?;
                let resid = norm_quantile(uj) - r * norm_quantile(ui);
                Ok(norm_cdf(r * norm_quantile(ui_new) + resid))
            }
            BivariateCopulaSpec::StudentT { r, nu } => {
                check_unit(ui, "conditioning uniform")?;
                check_unit(ui_new, "conditioning uniform")?;
                check_unit(uj, "uniform")?;
                let nu = f64::from(*nu);
                let t = StudentT::new(nu);
                let (yi, yj, yi_new) = (t.quantile(ui), t.quantile(uj), t.quantile(ui_new));
                Ok(t.cdf(t_score_transport(nu, *r, yi, yi_new, yj)))
            }
            BivariateCopulaSpec::Archimedean { .. } => self.cond_inv(self.cond_cdf(uj, ui)?, ui_new),
        }
    }

    /// ∂uj/∂ui along the conditional-rank curve through (ui, uj).
    pub fn psi1_uniform(&self, ui: f64, uj: f64) -> Result<f64> {
        check_unit(ui, "conditioning uniform")?;
        check_unit(uj, "uniform")?;
        let value = match self {
            BivariateCopulaSpec::Gaussian { r } => {
                let (yi, yj) = (norm_quantile(ui), norm_quantile(uj));
                r * norm_pdf(yj) / norm_pdf(yi)
            }
            BivariateCopulaSpec::StudentT { r, nu } => {
                let nu = f64::from(*nu);
                let t = StudentT::new(nu);
                let (yi, yj) = (t.quantile(ui), t.quantile(uj));
                t_score_slope(nu, *r, yi, yj) * t.pdf(yj) / t.pdf(yi)
            }
            BivariateCopulaSpec::Archimedean { generator: g } => {
                let a = g.psi_inv(ui);
                let b = g.psi_inv(uj);
                let s = a + b;
                (g.ln_neg_dpsi(b) - g.ln_neg_dpsi(a)).exp() * (g.dd_ratio(a) / g.dd_ratio(s) - 1.0)
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(numerical(format!("copula derivative not finite at ({ui}, {uj})")))
        }
    }
}

/// Slope ∂yj/∂yi of the conditional t transform at fixed rank.
#[inline]
pub fn t_score_slope(nu: f64, r: f64, yi: f64, yj: f64) -> f64 {
    r + (yi * yj - r * yi * yi) / (nu + yi * yi)
}

/// New score of a coordinate whose conditioning score moves from `yi` to `yi_new`.
#[inline]
pub fn t_score_transport(nu: f64, r: f64, yi: f64, yi_new: f64, yj: f64) -> f64 {
    let resid = (yj - r * yi) / t_cond_scale(nu, r, yi);
    r * yi_new + resid * t_cond_scale(nu, r, yi_new)
}

fn check_corr(r: f64) -> Result<()> {
    if r > -1.0 && r < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("correlation {r} must lie in (-1, 1)")))
    }
}

fn marginal_density(d: &DistributionSpec, x: f64, label: &str) -> Result<f64> {
    let f = d.pdf(x)?;
    if f > 0.0 && f.is_finite() {
        Ok(f)
    } else {
        Err(numerical(format!("{label} density underflow at x = {x} (f = {f})")))
    }
}

/// ∂/∂xi of the conditional quantile of Xj given Xi, evaluated at the point (xi, xj).
pub fn psi1(cop: &BivariateCopulaSpec, xi: f64, xj: f64, fi: &DistributionSpec, fj: &DistributionSpec) -> Result<f64> {
    let ui = fi.cdf(xi)?;
    let uj = fj.cdf(xj)?;
    let dens_i = marginal_density(fi, xi, "conditioning")?;
    let dens_j = marginal_density(fj, xj, "conditioned")?;
    Ok(cop.psi1_uniform(ui, uj)? * dens_i / dens_j)
}

/// Quantile of Xj given Xi = xi at level v.
pub fn conditional_quantile(cop: &BivariateCopulaSpec, v: f64, xi: f64, fi: &DistributionSpec, fj: &DistributionSpec) -> Result<f64> {
    let ui = fi.cdf(xi)?;
    fj.quantile(cop.cond_inv(v, ui)?)
}
