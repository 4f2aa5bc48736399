use serde::{Deserialize, Serialize};

use super::bivariate::{t_score_slope, t_score_transport, BivariateCopulaSpec};
use super::mvt::{MultivariateTSpec, MvtEngine};
use crate::error::{invalid, Result};
use crate::model::Factor;
use crate::rng::Stream;

/// One dependent pair; pairs in a model must be disjoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub first: Factor,
    pub second: Factor,
    pub copula: BivariateCopulaSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DependenceSpec {
    Independence,
    Pairs { pairs: Vec<PairSpec> },
    MultivariateT(MultivariateTSpec),
}

#[derive(Clone, Debug)]
enum Kind {
    Independence,
    Pairs { partner: Vec<Option<(usize, BivariateCopulaSpec, bool)>> },
    Mvt(MvtEngine),
}

/// Prepared dependence over the combined coordinates (X₁..X_m, Z₁..Z_n).
#[derive(Clone, Debug)]
pub struct Dependence {
    dim: usize,
    kind: Kind,
}

impl Dependence {
    pub fn new(spec: &DependenceSpec, m: usize, n: usize) -> Result<Self> {
        let dim = m + n;
        let kind = match spec {
            DependenceSpec::Independence => Kind::Independence,
            DependenceSpec::Pairs { pairs } => {
                let mut partner = vec![None; dim];
                for p in pairs {
                    p.copula.validate()?;
                    let a = p.first.coord(m, n)?;
                    let b = p.second.coord(m, n)?;
                    if a == b || partner[a].is_some() || partner[b].is_some() {
                        return Err(invalid(format!("dependent pairs must be disjoint and distinct ({} – {})", p.first, p.second)));
                    }
                    partner[a] = Some((b, p.copula.clone(), true));
                    partner[b] = Some((a, p.copula.clone(), false));
                }
                Kind::Pairs { partner }
            }
            DependenceSpec::MultivariateT(mvt) => {
                if mvt.dimension() != dim {
                    return Err(invalid(format!("multivariate t dimension {} does not match {} factors", mvt.dimension(), dim)));
                }
                Kind::Mvt(MvtEngine::new(mvt)?)
            }
        };
        Ok(Dependence { dim, kind })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_scores(&self) -> bool {
        matches!(self.kind, Kind::Mvt(_))
    }

    pub fn is_independent(&self) -> bool {
        matches!(self.kind, Kind::Independence)
    }

    /// Coordinates other than `t` whose law depends on coordinate `t`.
    pub fn dependents(&self, t: usize) -> Vec<usize> {
        match &self.kind {
            Kind::Independence => Vec::new(),
            Kind::Pairs { partner } => partner[t].iter().map(|(p, _, _)| *p).collect(),
            // Zero correlation still leaves t-copula coordinates dependent.
            Kind::Mvt(_) => (0..self.dim).filter(|&k| k != t).collect(),
        }
    }

    /// Draws one row of copula uniforms (and scores for the t copula).
    /// Returns the mixing variable, or NaN when there is none.
    pub fn draw(&self, s: &mut Stream, u: &mut [f64], y: &mut [f64]) -> Result<f64> {
        match &self.kind {
            Kind::Independence => {
                for v in u.iter_mut() {
                    *v = s.uniform();
                }
                Ok(f64::NAN)
            }
            Kind::Pairs { partner } => {
                for v in u.iter_mut() {
                    *v = s.uniform();
                }
                for (k, p) in partner.iter().enumerate() {
                    if let Some((first, cop, false)) = p {
                        u[k] = cop.cond_inv(u[k], u[*first])?;
                    }
                }
                Ok(f64::NAN)
            }
            Kind::Mvt(e) => Ok(e.draw(s, y, u)),
        }
    }

    /// Draws a row with coordinate `j` fixed at uniform `uj`.
    pub fn draw_given(&self, s: &mut Stream, j: usize, uj: f64, u: &mut [f64], y: &mut [f64]) -> Result<()> {
        match &self.kind {
            Kind::Independence => {
                for v in u.iter_mut() {
                    *v = s.uniform();
                }
                u[j] = uj;
            }
            Kind::Pairs { partner } => {
                self.draw(s, u, y)?;
                u[j] = uj;
                if let Some((p, cop, _)) = &partner[j] {
                    let v = s.uniform();
                    u[*p] = cop.cond_inv(v, uj)?;
                }
            }
            Kind::Mvt(e) => {
                let yj = e.t.quantile(uj);
                e.draw_conditional(s, j, yj, y, u);
                u[j] = uj;
            }
        }
        Ok(())
    }

    /// New uniforms of every coordinate when coordinate `t` moves to `ut_new`,
    /// keeping each coordinate's conditional rank given `t`.
    /// Coordinates not depending on `t` are copied unchanged.
    pub fn transport(&self, t: usize, ut_new: f64, u: &[f64], y: &[f64], out_u: &mut [f64], out_y: &mut [f64]) -> Result<()> {
        out_u.copy_from_slice(u);
        if !out_y.is_empty() {
            out_y.copy_from_slice(y);
        }
        out_u[t] = ut_new;
        if ut_new == u[t] {
            return Ok(());
        }
        match &self.kind {
            Kind::Independence => {}
            Kind::Pairs { partner } => {
                if let Some((p, cop, _)) = &partner[t] {
                    out_u[*p] = cop.transport(u[t], ut_new, u[*p])?;
                }
            }
            Kind::Mvt(e) => {
                let nu = e.nu();
                let yt_new = e.t.quantile(ut_new);
                out_y[t] = yt_new;
                for k in 0..self.dim {
                    if k == t {
                        continue;
                    }
                    out_y[k] = t_score_transport(nu, e.corr(t, k), y[t], yt_new, y[k]);
                    out_u[k] = e.t.cdf(out_y[k]);
                }
            }
        }
        Ok(())
    }

    /// ∂U_k/∂U_t along the conditional-rank curve through the row; 1 when k = t.
    pub fn slope_uniform(&self, t: usize, k: usize, u: &[f64], y: &[f64]) -> Result<f64> {
        if k == t {
            return Ok(1.0);
        }
        match &self.kind {
            Kind::Independence => Ok(0.0),
            Kind::Pairs { partner } => match &partner[t] {
                Some((p, cop, _)) if *p == k => cop.psi1_uniform(u[t], u[k]),
                _ => Ok(0.0),
            },
            Kind::Mvt(e) => {
                let nu = e.nu();
                let slope = t_score_slope(nu, e.corr(t, k), y[t], y[k]);
                Ok(slope * e.t.pdf(y[k]) / e.t.pdf(y[t]))
            }
        }
    }

    /// The bivariate copula linking coordinates `t` and `k`, if any.
    pub fn pair_copula(&self, t: usize, k: usize) -> Option<BivariateCopulaSpec> {
        match &self.kind {
            Kind::Independence => None,
            Kind::Pairs { partner } => match &partner[t] {
                Some((p, cop, _)) if *p == k => Some(cop.clone()),
                _ => None,
            },
            Kind::Mvt(e) => Some(e.spec.pair(t, k)),
        }
    }
}
