//! Independent checks of the estimators: difference quotients of the risk
//! measure under common random numbers, and exact enumeration of small
//! discrete models.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Error, Result};
use crate::estimators::{density_at_quantile, empirical_quantile, BandSpec, RiskMeasureSpec, SensitivityEstimate};
use crate::model::{Aggregation, DiscreteModelSpec, Factor, LossModel, LossModelSpec, Mode, ScenarioSet, Severity};
use crate::rng::SeedSpec;
use crate::stress::StressSpec;

/// Bias and noise of indicator models balance on this grid at n = 4·10⁶.
pub const DEFAULT_EPS_GRID: [f64; 3] = [0.02, 0.01, 0.005];
pub const DEFAULT_FD_SCENARIOS: usize = 4_000_000;

/// Largest outcome space [`brute_force_discrete`] enumerates.
pub const MAX_ATOMS: usize = 1_000_000;

/// Comparison of an estimate against a reference value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agreement {
    pub estimate: f64,
    pub estimate_stderr: f64,
    pub reference: f64,
    pub reference_stderr: f64,
    pub difference: f64,
    /// max(rel_tol·|reference|, k_sigma·combined stderr).
    pub tolerance: f64,
    pub passed: bool,
}

impl Agreement {
    pub fn new(estimate: f64, estimate_stderr: f64, reference: f64, reference_stderr: f64, rel_tol: f64, k_sigma: f64) -> Self {
        let combined = estimate_stderr.hypot(reference_stderr);
        let tolerance = (rel_tol * reference.abs()).max(k_sigma * combined);
        let difference = estimate - reference;
        Agreement { estimate, estimate_stderr, reference, reference_stderr, difference, tolerance, passed: difference.abs() <= tolerance }
    }
}

/// Forward differences of a risk measure on common random numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FDReport {
    pub target: Factor,
    pub stress: StressSpec,
    pub risk_measure: RiskMeasureSpec,
    pub mode: Mode,
    pub n_scenarios: usize,
    pub seed: SeedSpec,
    pub base_value: f64,
    /// Strictly decreasing.
    pub eps_grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// Extrapolated from the two smallest eps, assuming first-order bias.
    pub richardson: f64,
    pub mc_stderr: f64,
    /// Successive gaps of the difference quotients change sign beyond noise.
    pub non_monotone: bool,
    #[serde(default)]
    pub agreement: Option<Agreement>,
}

impl FDReport {
    /// Records the comparison of `est` with the extrapolated value.
    pub fn compare(&mut self, est: &SensitivityEstimate, rel_tol: f64, k_sigma: f64) -> &Agreement {
        self.agreement.insert(Agreement::new(est.value, est.stderr, self.richardson, self.mc_stderr, rel_tol, k_sigma))
    }

    /// Parses a report and re-checks the grid invariants.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: FDReport = serde_json::from_str(text)?;
        check_grid(&r.eps_grid)?;
        let k = r.eps_grid.len();
        if r.estimates.len() != k || r.stderrs.len() != k {
            return Err(invalid("one estimate and stderr per eps is required"));
        }
        Ok(r)
    }
}

fn check_grid(eps_grid: &[f64]) -> Result<()> {
    if eps_grid.len() < 2 {
        return Err(invalid("the eps grid needs at least two points"));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) || eps_grid.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(invalid(format!("eps grid {eps_grid:?} must be positive and strictly decreasing")));
    }
    Ok(())
}

/// Simulates `n` scenarios and differentiates `rm` numerically along the stress.
#[allow(clippy::too_many_arguments)]
pub fn fd_sensitivity(
    spec: &LossModelSpec,
    target: Factor,
    stress: &StressSpec,
    rm: &RiskMeasureSpec,
    mode: Mode,
    eps_grid: &[f64],
    n: usize,
    seed: SeedSpec,
) -> Result<FDReport> {
    let model = LossModel::new(spec)?;
    let base = model.simulate(n, seed)?;
    fd_on_scenarios(&model, &base, target, stress, rm, mode, eps_grid)
}

/// [`fd_sensitivity`] on existing base scenarios, which may be shared with an estimator.
#[allow(clippy::too_many_arguments)]
pub fn fd_on_scenarios(
    model: &LossModel,
    base: &ScenarioSet,
    target: Factor,
    stress: &StressSpec,
    rm: &RiskMeasureSpec,
    mode: Mode,
    eps_grid: &[f64],
) -> Result<FDReport> {
    let stressed = stressed_losses(model, base, target, stress, mode, eps_grid)?;
    fd_from_losses(base, &stressed, target, stress, rm, mode, eps_grid)
}

/// Loss columns of `base` under each eps of the grid, for reuse across risk measures.
pub fn stressed_losses(
    model: &LossModel,
    base: &ScenarioSet,
    target: Factor,
    stress: &StressSpec,
    mode: Mode,
    eps_grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    stress.validate()?;
    check_grid(eps_grid)?;
    eps_grid.iter().map(|&eps| model.stressed_loss(base, target, stress, eps, mode)).collect()
}

/// Difference quotients from precomputed stressed losses, one column per eps.
#[allow(clippy::too_many_arguments)]
pub fn fd_from_losses(
    base: &ScenarioSet,
    stressed: &[Vec<f64>],
    target: Factor,
    stress: &StressSpec,
    rm: &RiskMeasureSpec,
    mode: Mode,
    eps_grid: &[f64],
) -> Result<FDReport> {
    rm.validate()?;
    stress.validate()?;
    check_grid(eps_grid)?;
    for &e in eps_grid {
        stress.check_eps(e)?;
    }
    let n = base.len();
    if n < 2 {
        return Err(Error::EmptyEvent("finite differences need at least two scenarios".into()));
    }
    if stressed.len() != eps_grid.len() || stressed.iter().any(|l| l.len() != n) {
        return Err(invalid("one stressed loss column per eps, each as long as the base, is required"));
    }
    let base_part = Linearised::new(&base.loss, rm)?;

    // Influence of each difference quotient, scenario by scenario.
    let mut estimates = Vec::with_capacity(eps_grid.len());
    let mut influence: Vec<Vec<f64>> = Vec::with_capacity(eps_grid.len());
    for (&eps, stressed) in eps_grid.iter().zip(stressed) {
        let part = Linearised::new(stressed, rm)?;
        estimates.push((part.value - base_part.value) / eps);
        influence.push(stressed.iter().zip(&base.loss).map(|(ls, l)| (part.influence(*ls) - base_part.influence(*l)) / eps).collect());
    }
    let stderrs: Vec<f64> = influence.iter().map(|v| mean_stderr(v)).collect();

    let k = eps_grid.len();
    let (e1, e2) = (eps_grid[k - 2], eps_grid[k - 1]);
    let w = e2 / (e1 - e2);
    let richardson = estimates[k - 1] + (estimates[k - 1] - estimates[k - 2]) * w;
    let combined: Vec<f64> = influence[k - 1].iter().zip(&influence[k - 2]).map(|(a, b)| (1.0 + w) * a - w * b).collect();
    let mc_stderr = mean_stderr(&combined);

    // Gaps at rounding level carry no sign.
    let floor = 1e-9 * estimates.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut gaps = Vec::with_capacity(k - 1);
    for i in 0..k - 1 {
        let diff: Vec<f64> = influence[i].iter().zip(&influence[i + 1]).map(|(a, b)| a - b).collect();
        gaps.push((estimates[i] - estimates[i + 1], mean_stderr(&diff).max(floor)));
    }
    let non_monotone = gaps.windows(2).any(|g| {
        let ((a, sa), (b, sb)) = (g[0], g[1]);
        a.signum() != b.signum() && a.abs() > 2.0 * sa && b.abs() > 2.0 * sb
    });

    Ok(FDReport {
        target,
        stress: stress.clone(),
        risk_measure: *rm,
        mode,
        n_scenarios: n,
        seed: base.seed,
        base_value: base_part.value,
        eps_grid: eps_grid.to_vec(),
        estimates,
        stderrs,
        richardson,
        mc_stderr,
        non_monotone,
        agreement: None,
    })
}

/// A risk measure and its first-order expansion in the scenario losses.
struct Linearised {
    rm: RiskMeasureSpec,
    value: f64,
    quantile: f64,
    density: f64,
}

impl Linearised {
    fn new(loss: &[f64], rm: &RiskMeasureSpec) -> Result<Self> {
        let value = crate::estimators::risk_measure(loss, rm)?;
        let (quantile, density) = match *rm {
            RiskMeasureSpec::Mean => (f64::NAN, f64::NAN),
            RiskMeasureSpec::Es { alpha } => (empirical_quantile(loss, alpha)?, f64::NAN),
            RiskMeasureSpec::Var { alpha } => (value, density_at_quantile(loss, alpha, &BandSpec::default())?),
        };
        Ok(Linearised { rm: *rm, value, quantile, density })
    }

    /// Scenario contribution up to an additive constant.
    fn influence(&self, l: f64) -> f64 {
        match self.rm {
            RiskMeasureSpec::Mean => l,
            RiskMeasureSpec::Es { alpha } => (l - self.quantile).max(0.0) / (1.0 - alpha),
            RiskMeasureSpec::Var { alpha } => (alpha - f64::from(u8::from(l <= self.quantile))) / self.density,
        }
    }
}

fn mean_stderr(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// Exact risk measure of a stressed discrete model and its derivative at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactReport {
    pub risk_measure: RiskMeasureSpec,
    pub n_atoms: usize,
    pub value: f64,
    pub derivative: f64,
    pub eps_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// (ρ(T_ε) − ρ(T))/ε, for checking the derivative.
    pub difference_quotients: Vec<f64>,
}

/// Loss distribution of each support point, as sorted (value, probability) atoms.
fn outcome_laws(dm: &DiscreteModelSpec) -> Result<Vec<Vec<(f64, f64)>>> {
    dm.validate()?;
    match &dm.aggregation {
        Aggregation::Tabulated { values } => Ok(values.iter().map(|v| vec![(*v, 1.0)]).collect()),
        Aggregation::CompoundSum => {
            let Severity::Atoms { values, probs } = &dm.severity else {
                return Err(invalid("exact enumeration needs atom severities or tabulated losses"));
            };
            let mut one: Vec<(f64, f64)> = values.iter().copied().zip(probs.iter().copied()).collect();
            one = merge_atoms(one);
            let mut power = vec![(0.0, 1.0)];
            let mut laws = Vec::with_capacity(dm.r());
            let mut count = 0usize;
            for &w in &dm.support {
                while count < w as usize {
                    if power.len() * one.len() > MAX_ATOMS {
                        return Err(invalid(format!("the {}-fold severity convolution exceeds {MAX_ATOMS} atoms", count + 1)));
                    }
                    let next = power.iter().flat_map(|(a, pa)| one.iter().map(move |(b, pb)| (a + b, pa * pb))).collect();
                    power = merge_atoms(next);
                    count += 1;
                }
                laws.push(power.clone());
            }
            Ok(laws)
        }
    }
}

/// Sorts atoms and merges values equal up to rounding.
fn merge_atoms(mut atoms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (v, p) in atoms {
        match out.last_mut() {
            Some((lv, lp)) if (v - *lv).abs() <= 1e-12 * lv.abs().max(1.0) => *lp += p,
            _ => out.push((v, p)),
        }
    }
    out
}

/// Weights of each support point: the stressed probabilities, or their ε-derivatives.
fn mix(laws: &[Vec<(f64, f64)>], weights: &[f64]) -> Vec<(f64, f64)> {
    let all = laws.iter().zip(weights).flat_map(|(law, w)| law.iter().map(move |(v, p)| (*v, p * w))).collect();
    merge_atoms(all)
}

/// κ_ε⁻¹ on the cumulative probabilities; 0 and 1 stay fixed.
fn stressed_cumulative(stress: &StressSpec, eps: f64, p: f64) -> Result<f64> {
    if p >= 1.0 {
        Ok(1.0)
    } else {
        stress.inverse_apply(eps, p)
    }
}

fn increments(c: &[f64]) -> Vec<f64> {
    (0..c.len()).map(|k| c[k] - if k == 0 { 0.0 } else { c[k - 1] }).collect()
}

/// Left α-quantile of a sorted atom list and the cdf just below and at it.
fn atom_quantile(law: &[(f64, f64)], alpha: f64) -> (usize, f64, f64) {
    let mut below = 0.0;
    for (i, (_, p)) in law.iter().enumerate() {
        if below + p >= alpha {
            return (i, below, below + p);
        }
        below += p;
    }
    let last = law.len() - 1;
    (last, below - law[last].1, below)
}

fn exact_measure(law: &[(f64, f64)], rm: &RiskMeasureSpec) -> f64 {
    match *rm {
        RiskMeasureSpec::Mean => law.iter().map(|(v, p)| v * p).sum(),
        RiskMeasureSpec::Var { alpha } => law[atom_quantile(law, alpha).0].0,
        RiskMeasureSpec::Es { alpha } => {
            let (i, _, at) = atom_quantile(law, alpha);
            let q = law[i].0;
            let above: f64 = law[i + 1..].iter().map(|(v, p)| v * p).sum();
            (above + q * (at - alpha)) / (1.0 - alpha)
        }
    }
}

/// Exact ρ(T_ε) on `eps_grid` and the derivative at zero for a stress of the
/// uniform behind W. Needs α strictly inside a step of the loss cdf; at a step
/// boundary the one-sided derivatives differ.
pub fn brute_force_discrete(dm: &DiscreteModelSpec, stress: &StressSpec, rm: &RiskMeasureSpec, eps_grid: &[f64]) -> Result<ExactReport> {
    rm.validate()?;
    stress.validate()?;
    for &e in eps_grid {
        stress.check_eps(e)?;
    }
    let laws = outcome_laws(dm)?;
    let base = mix(&laws, &increments(&dm.cumulative));
    let value = exact_measure(&base, rm);

    let speed: Vec<f64> = dm.cumulative.iter().map(|&p| if p >= 1.0 { Ok(0.0) } else { stress.deriv_kinv(p) }).collect::<Result<_>>()?;
    let dlaw = mix(&laws, &increments(&speed));
    let derivative = match *rm {
        RiskMeasureSpec::Mean => dlaw.iter().map(|(v, dp)| v * dp).sum(),
        RiskMeasureSpec::Var { alpha } | RiskMeasureSpec::Es { alpha } => {
            let (i, below, at) = atom_quantile(&base, alpha);
            let tol = 1e-12;
            if alpha - below <= tol || at - alpha <= tol {
                return Err(Error::Assumption(format!(
                    "alpha {alpha} sits at a jump of the loss cdf; the risk measure is not differentiable there"
                )));
            }
            let q = base[i].0;
            match rm {
                RiskMeasureSpec::Var { .. } => 0.0,
                _ => dlaw.iter().map(|(v, dp)| (v - q).max(0.0) * dp).sum::<f64>() / (1.0 - alpha),
            }
        }
    };

    let mut values = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let cum: Vec<f64> = dm.cumulative.iter().map(|&p| stressed_cumulative(stress, eps, p)).collect::<Result<_>>()?;
        let inc = increments(&cum);
        if inc.iter().any(|p| *p < 0.0) {
            return Err(numerical(format!("the stress at eps {eps} does not preserve the order of probabilities")));
        }
        values.push(exact_measure(&mix(&laws, &inc), rm));
    }
    let difference_quotients = values.iter().zip(eps_grid).map(|(v, e)| (v - value) / e).collect();
    Ok(ExactReport { risk_measure: *rm, n_atoms: base.len(), value, derivative, eps_grid: eps_grid.to_vec(), values, difference_quotients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{norm_pdf, norm_quantile};

    fn bernoulli(p: f64) -> DiscreteModelSpec {
        DiscreteModelSpec {
            support: vec![0.0, 1.0],
            cumulative: vec![1.0 - p, 1.0],
            severity: Severity::Atoms { values: vec![1.0], probs: vec![1.0] },
            aggregation: Aggregation::CompoundSum,
        }
    }

    #[test]
    fn bernoulli_es_derivative_in_closed_form() {
        let wang = StressSpec::Wang { sign: 1 };
        let r = brute_force_discrete(&bernoulli(0.3), &wang, &RiskMeasureSpec::Es { alpha: 0.5 }, &[1e-3, 1e-4]).unwrap();
        let exact = norm_pdf(norm_quantile(0.7)) / 0.5;
        assert!((r.derivative - exact).abs() < 1e-12);
        assert!((r.value - 0.6).abs() < 1e-12);
        assert!((r.difference_quotients[1] - exact).abs() < 1e-3);
        // The 10% tail sits entirely on the atom at 1.
        let r = brute_force_discrete(&bernoulli(0.3), &wang, &RiskMeasureSpec::Es { alpha: 0.9 }, &[1e-3]).unwrap();
        assert_eq!(r.derivative, 0.0);
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn zero_eps_reproduces_the_base_measure() {
        let r = brute_force_discrete(&bernoulli(0.3), &StressSpec::Wang { sign: -1 }, &RiskMeasureSpec::Mean, &[0.0]).unwrap();
        assert_eq!(r.values[0], r.value);
        assert!((r.value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn alpha_on_a_cdf_jump_is_rejected() {
        let r = brute_force_discrete(&bernoulli(0.3), &StressSpec::Wang { sign: 1 }, &RiskMeasureSpec::Var { alpha: 0.7 }, &[1e-3]);
        assert!(matches!(r, Err(Error::Assumption(_))));
    }

    #[test]
    fn convolution_merges_equal_sums() {
        let dm = DiscreteModelSpec {
            support: vec![0.0, 1.0, 2.0],
            cumulative: vec![0.2, 0.6, 1.0],
            severity: Severity::Atoms { values: vec![1.0, 2.0], probs: vec![0.5, 0.5] },
            aggregation: Aggregation::CompoundSum,
        };
        let laws = outcome_laws(&dm).unwrap();
        assert_eq!(laws[2], vec![(2.0, 0.25), (3.0, 0.5), (4.0, 0.25)]);
    }

    #[test]
    fn continuous_severity_cannot_be_enumerated() {
        let mut dm = bernoulli(0.3);
        dm.severity = Severity::Distribution(crate::distributions::DistributionSpec::Gamma { shape: 5.0, scale: 1.0 });
        assert!(brute_force_discrete(&dm, &StressSpec::Wang { sign: 1 }, &RiskMeasureSpec::Mean, &[1e-3]).is_err());
    }

    #[test]
    fn grid_must_decrease() {
        assert!(check_grid(&[0.01, 0.02]).is_err());
        assert!(check_grid(&[0.01]).is_err());
        assert!(check_grid(&[0.02, 0.01]).is_ok());
    }

    #[test]
    fn agreement_tolerance_takes_the_larger_bound() {
        let a = Agreement::new(1.04, 0.0, 1.0, 0.0, 0.05, 2.0);
        assert!(a.passed);
        let a = Agreement::new(1.2, 0.05, 1.0, 0.05, 0.05, 2.0);
        assert!((a.tolerance - 2.0 * 0.05f64.hypot(0.05)).abs() < 1e-15);
        assert!(!a.passed);
    }
}
