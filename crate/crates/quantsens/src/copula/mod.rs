//! Dependence machinery: bivariate copulas with their conditional transforms
//! and slopes, the multivariate t copula, and the one-factor correlation builder.

mod bivariate;
mod dependence;
mod mvt;

pub use bivariate::{conditional_quantile, psi1, BivariateCopulaSpec, GeneratorSpec};
pub use dependence::{Dependence, DependenceSpec, PairSpec};
pub use mvt::{build_factor_sigma, check_correlation, load_correlation_csv, sample_mvt, MultivariateTSpec, MvtEngine};

/// Per-scenario latents behind a simulated row.
///
/// `uniforms[k]` is the copula uniform of combined coordinate k (X first, then Z).
/// `scores` holds t-copula scores t_ν⁻¹(U) and `mixing` the mixing variable
/// when the dependence is a multivariate t.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RosenblattAux {
    pub uniforms: Vec<Vec<f64>>,
    pub scores: Option<Vec<Vec<f64>>>,
    pub mixing: Option<Vec<f64>>,
}
