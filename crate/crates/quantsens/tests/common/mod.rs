//! Models and checks shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use quantsens::copula::{conditional_quantile, psi1, BivariateCopulaSpec, DependenceSpec, GeneratorSpec, MultivariateTSpec, PairSpec};
use quantsens::distributions::{lognormal_from_mean_cov, DistributionSpec};
use quantsens::model::{DiscreteModelSpec, Factor, GFunctionSpec, LossModelSpec, Severity};
use quantsens::special::norm_quantile;
use quantsens::stress::StressSpec;

pub fn std_normal() -> DistributionSpec {
    DistributionSpec::Normal { mean: 0.0, sd: 1.0 }
}

/// Two obligors over two lines: obligor 1 defaults on a normal driver and
/// owes Z1; obligor 2 defaults on a uniform driver and owes 10 + Z1/2 + Z2.
pub fn two_obligor(dependence: DependenceSpec) -> LossModelSpec {
    LossModelSpec {
        x_marginals: vec![std_normal(), DistributionSpec::Uniform01],
        z_marginals: vec![lognormal_from_mean_cov(100.0, 0.3).unwrap(), lognormal_from_mean_cov(80.0, 0.5).unwrap()],
        thresholds: vec![norm_quantile(0.1), 0.12],
        g: vec![GFunctionSpec::Identity { z_index: 0 }, GFunctionSpec::Linear { intercept: 10.0, z: vec![0.5, 1.0], x: vec![] }],
        dependence,
        general_mode: false,
    }
}

/// Four-dimensional t copula over (X1, X2, Z1, Z2).
pub fn mvt_dependence() -> DependenceSpec {
    let sigma = vec![vec![1.0, 0.2, 0.4, 0.1], vec![0.2, 1.0, 0.1, 0.3], vec![0.4, 0.1, 1.0, 0.3], vec![0.1, 0.3, 0.3, 1.0]];
    DependenceSpec::MultivariateT(MultivariateTSpec { sigma, nu: 4 })
}

/// Each obligor's driver paired with its own line through `cop`.
pub fn paired_dependence(cop: BivariateCopulaSpec) -> DependenceSpec {
    DependenceSpec::Pairs {
        pairs: vec![
            PairSpec { first: Factor::X(0), second: Factor::Z(0), copula: cop.clone() },
            PairSpec { first: Factor::X(1), second: Factor::Z(1), copula: cop },
        ],
    }
}

/// One stress of every family, each on a factor whose domain suits it.
pub fn marginal_gate_cases(spec: &LossModelSpec) -> Vec<(Factor, StressSpec)> {
    let z1 = spec.z_marginals[0].clone();
    vec![
        (Factor::Z(0), StressSpec::Additive { beta: 10.0 }),
        (Factor::X(0), StressSpec::Additive { beta: 1.0 }),
        (Factor::Z(1), StressSpec::Proportional { beta: 1.0 }),
        (Factor::X(0), StressSpec::Probability { beta: 0.5, marginal: spec.x_marginals[0].clone() }),
        (Factor::Z(0), StressSpec::TailUpper { t: z1.quantile(0.8).unwrap() }),
        (Factor::X(0), StressSpec::TailLower { t: norm_quantile(0.2) }),
        (Factor::Z(0), StressSpec::Mixture { base: z1, alternative: lognormal_from_mean_cov(110.0, 0.3).unwrap() }),
        (Factor::X(1), StressSpec::Wang { sign: -1 }),
    ]
}

/// Cascade cases whose propagation keeps a constant direction under the
/// paired t copula.
pub fn cascade_gate_cases(spec: &LossModelSpec) -> Vec<(Factor, StressSpec)> {
    vec![
        (Factor::X(0), StressSpec::Additive { beta: 1.0 }),
        (Factor::X(0), StressSpec::TailLower { t: norm_quantile(0.2) }),
        (Factor::X(1), StressSpec::Wang { sign: -1 }),
        (Factor::Z(0), StressSpec::TailUpper { t: spec.z_marginals[0].quantile(0.8).unwrap() }),
    ]
}

/// Negative-binomial count of severities 1, 2 or 5.
pub fn atom_compound() -> DiscreteModelSpec {
    let severity = Severity::Atoms { values: vec![1.0, 2.0, 5.0], probs: vec![0.5, 0.3, 0.2] };
    DiscreteModelSpec::negative_binomial(3.0, 2.0, 0.999, severity).unwrap()
}

pub fn discrete_gate_stresses() -> Vec<StressSpec> {
    vec![
        StressSpec::Wang { sign: 1 },
        StressSpec::Wang { sign: -1 },
        StressSpec::Probability { beta: 0.5, marginal: DistributionSpec::Uniform01 },
    ]
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
}

/// Every stress family with parameters of both signs and a domain grid on
/// which the default validity neighbourhood applies.
pub fn stress_suite() -> Vec<(StressSpec, Vec<f64>)> {
    let ln = DistributionSpec::Lognormal { mu: 0.0, sigma: 0.5 };
    let ln_up = DistributionSpec::Lognormal { mu: 0.2, sigma: 0.5 };
    let real = linspace(-5.0, 5.0, 41);
    let positive = linspace(0.0, 10.0, 41);
    let normal_body = linspace(-2.5, 2.5, 41);
    let lognormal_body = linspace(0.1, 6.0, 41);
    let unit = linspace(0.01, 0.99, 41);
    vec![
        (StressSpec::Additive { beta: 2.0 }, real.clone()),
        (StressSpec::Additive { beta: -1.5 }, real.clone()),
        (StressSpec::Proportional { beta: 1.0 }, positive.clone()),
        (StressSpec::Proportional { beta: -0.5 }, positive),
        (StressSpec::Probability { beta: 0.5, marginal: std_normal() }, normal_body.clone()),
        (StressSpec::Probability { beta: -0.5, marginal: std_normal() }, normal_body),
        (StressSpec::Mixture { base: ln.clone(), alternative: ln_up.clone() }, lognormal_body.clone()),
        (StressSpec::Mixture { base: ln_up, alternative: ln }, lognormal_body),
        (StressSpec::TailUpper { t: 1.0 }, real.clone()),
        (StressSpec::TailLower { t: 1.0 }, real),
        (StressSpec::Wang { sign: 1 }, unit.clone()),
        (StressSpec::Wang { sign: -1 }, unit),
    ]
}

/// Worst relative gap between `deriv` and a Richardson-extrapolated forward
/// difference of `f` in ε at zero. The step keeps the move in x near 1e-4,
/// so fast stresses are not judged on their curvature.
fn derivative_gap(f: impl Fn(f64) -> f64, deriv: f64) -> f64 {
    let h = 1e-4 / deriv.abs().max(1.0);
    let (f0, f1, f2) = (f(0.0), f(h), f(h / 2.0));
    let fd = 2.0 * (f2 - f0) / (h / 2.0) - (f1 - f0) / h;
    (fd - deriv).abs() / deriv.abs().max(1.0)
}

/// The stress-function axioms on `xs`: the property grid of the library plus
/// K and Kinv against difference quotients to 1e-6.
pub fn check_stress_axioms(s: &StressSpec, xs: &[f64]) -> Result<(), String> {
    s.check_grid(xs, quantsens::stress::DEFAULT_EPS0).map_err(|e| format!("{}: {e}", s.name()))?;
    for &x in xs.iter().filter(|&&x| s.in_domain(x)) {
        let k = s.deriv_k(x).map_err(|e| e.to_string())?;
        let gap = derivative_gap(|e| s.apply(e, x).unwrap(), k);
        if gap > 1e-6 {
            return Err(format!("{}: K({x}) = {k} off by {gap:.2e}", s.name()));
        }
        let kinv = s.deriv_kinv(x).map_err(|e| e.to_string())?;
        let gap = derivative_gap(|e| s.inverse_apply(e, x).unwrap(), kinv);
        if gap > 1e-6 {
            return Err(format!("{}: Kinv({x}) = {kinv} off by {gap:.2e}", s.name()));
        }
    }
    Ok(())
}

pub fn psi_families() -> Vec<(&'static str, BivariateCopulaSpec)> {
    vec![
        ("gaussian", BivariateCopulaSpec::Gaussian { r: 0.6 }),
        ("t4", BivariateCopulaSpec::StudentT { r: 0.35, nu: 4 }),
        ("clayton2", BivariateCopulaSpec::Archimedean { generator: GeneratorSpec::Clayton { theta: 2.0 } }),
        ("gumbel1.5", BivariateCopulaSpec::Archimedean { generator: GeneratorSpec::Gumbel { theta: 1.5 } }),
    ]
}

/// Largest gap between the closed-form slope of the conditional quantile and
/// its centred difference, over a 21×21 interior grid with normal marginals.
pub fn psi1_max_gap(cop: &BivariateCopulaSpec) -> f64 {
    let f = std_normal();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for a in 1..=21 {
        for b in 1..=21 {
            let (ui, uj) = (a as f64 / 22.0, b as f64 / 22.0);
            let (xi, xj) = (norm_quantile(ui), norm_quantile(uj));
            let v = cop.cond_cdf(uj, ui).unwrap();
            let up = conditional_quantile(cop, v, xi + h, &f, &f).unwrap();
            let down = conditional_quantile(cop, v, xi - h, &f, &f).unwrap();
            let fd = (up - down) / (2.0 * h);
            let exact = psi1(cop, xi, xj, &f, &f).unwrap();
            worst = worst.max((fd - exact).abs() / exact.abs().max(1.0));
        }
    }
    worst
}

/// Spearman rank correlation; ties are not expected.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
