//! Reinsurance credit-risk portfolio: 12 lines of business ceded in layers to
//! 8 reinsurers whose defaults depend on the gross losses through one factor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copula::{build_factor_sigma, check_correlation, DependenceSpec};
use crate::distributions::{lognormal_from_mean_cov, DistributionSpec};
use crate::error::{invalid, Result};
use crate::estimators::{
    empirical_quantile, marginal_sens_batch, risk_measure, write_results, BandSpec, BootstrapSpec, ConditionalSets, ResultRow,
    RiskMeasureSpec, SensitivityEstimate,
};
use crate::model::{Factor, GFunctionSpec, LayerTerm, LossModel, LossModelSpec, ScenarioSet};
use crate::rng::{domain, par_chunks, SeedSpec};
use crate::stress::StressSpec;

/// Coefficient of variation per line of business.
pub const LOB_COVS: [f64; 12] = [0.1, 0.08, 0.15, 0.08, 0.14, 0.19, 0.083, 0.064, 0.13, 0.17, 0.17, 0.17];

/// Correlation of the gross losses, as printed.
#[rustfmt::skip]
pub const LOB_CORRELATION: [[f64; 12]; 12] = [
    [1.0,  0.5,  0.5,  0.25, 0.5,  0.25, 0.5,  0.25, 0.5,  0.25, 0.25, 0.25],
    [0.5,  1.0,  0.25, 0.25, 0.25, 0.25, 0.5,  0.5,  0.5,  0.25, 0.25, 0.25],
    [0.5,  0.25, 1.0,  0.25, 0.25, 0.25, 0.25, 0.5,  0.5,  0.25, 0.5,  0.25],
    [0.25, 0.25, 0.25, 1.0,  0.25, 0.25, 0.25, 0.5,  0.5,  0.25, 0.5,  0.5 ],
    [0.5,  0.25, 0.25, 0.25, 1.0,  0.5,  0.5,  0.25, 0.5,  0.5,  0.25, 0.25],
    [0.25, 0.25, 0.25, 0.25, 0.5,  1.0,  0.5,  0.25, 0.5,  0.5,  0.25, 0.25],
    [0.5,  0.5,  0.25, 0.25, 0.5,  0.5,  1.0,  0.25, 0.5,  0.5,  0.25, 0.25],
    [0.25, 0.5,  0.5,  0.5,  0.25, 0.25, 0.25, 1.0,  0.5,  0.25, 0.25, 0.5 ],
    [0.5,  0.5,  0.5,  0.5,  0.5,  0.5,  0.5,  0.5,  1.0,  0.25, 0.5,  0.25],
    [0.25, 0.25, 0.25, 0.25, 0.5,  0.5,  0.5,  0.25, 0.25, 1.0,  0.25, 0.25],
    [0.25, 0.25, 0.5,  0.5,  0.25, 0.25, 0.25, 0.25, 0.5,  0.25, 1.0,  0.25],
    [0.25, 0.25, 0.25, 0.5,  0.25, 0.25, 0.25, 0.5,  0.25, 0.25, 0.25, 1.0 ],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReinsuranceConfig {
    pub lob_mean: f64,
    pub lob_covs: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    pub default_probs: Vec<f64>,
    /// Quantile levels (attachment, exhaustion) of each reinsurer's layers.
    pub layer_bands: Vec<(f64, f64)>,
    /// Zero-based lines of business ceded to each reinsurer.
    pub coverage: Vec<Vec<usize>>,
    /// Correlation between any two reinsurers' default drivers.
    pub lambda: f64,
    pub nu: u32,
}

impl Default for ReinsuranceConfig {
    fn default() -> Self {
        let mut coverage: Vec<Vec<usize>> = (0..6).map(|j| vec![2 * j, 2 * j + 1]).collect();
        coverage.push((0..6).collect());
        coverage.push((6..12).collect());
        ReinsuranceConfig {
            lob_mean: 100.0,
            lob_covs: LOB_COVS.to_vec(),
            correlation: LOB_CORRELATION.iter().map(|r| r.to_vec()).collect(),
            default_probs: [[0.015; 6].as_slice(), &[0.01; 2]].concat(),
            layer_bands: [[(0.55, 0.85); 6].as_slice(), &[(0.85, 0.95); 2]].concat(),
            coverage,
            lambda: 0.05,
            nu: 4,
        }
    }
}

impl ReinsuranceConfig {
    pub fn n_lob(&self) -> usize {
        self.lob_covs.len()
    }

    pub fn m_reins(&self) -> usize {
        self.default_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n_lob(), self.m_reins());
        check_correlation(&self.correlation)?;
        if self.correlation.len() != n {
            return Err(invalid(format!("{n} lines of business but a {0}×{0} correlation", self.correlation.len())));
        }
        if self.layer_bands.len() != m || self.coverage.len() != m {
            return Err(invalid(format!("{m} reinsurers need {m} layer bands and coverage lists")));
        }
        if self.default_probs.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(invalid("default probabilities must lie in (0, 1)"));
        }
        if self.layer_bands.iter().any(|(lo, hi)| !(0.0 < *lo && lo < hi && *hi < 1.0)) {
            return Err(invalid("layer bands need 0 < attachment < exhaustion < 1"));
        }
        if self.coverage.iter().flatten().any(|k| *k >= n) {
            return Err(invalid("coverage refers to a line of business that does not exist"));
        }
        Ok(())
    }
}

/// Lognormal gross losses, t(ν) default drivers with P(X_j ≤ d_j) = q_j, layer
/// recoveries and the one-factor t copula.
pub fn build_reinsurance_model(cfg: &ReinsuranceConfig) -> Result<LossModelSpec> {
    cfg.validate()?;
    let z_marginals = cfg.lob_covs.iter().map(|cov| lognormal_from_mean_cov(cfg.lob_mean, *cov)).collect::<Result<Vec<_>>>()?;
    let x = DistributionSpec::StudentT { nu: cfg.nu, standardised: false };
    let thresholds = cfg.default_probs.iter().map(|q| x.quantile(*q)).collect::<Result<Vec<_>>>()?;
    let mut g = Vec::with_capacity(cfg.m_reins());
    for (lobs, (lo, hi)) in cfg.coverage.iter().zip(&cfg.layer_bands) {
        let mut terms = Vec::with_capacity(lobs.len());
        for &k in lobs {
            let attachment = z_marginals[k].quantile(*lo)?;
            terms.push(LayerTerm { z_index: k, attachment, limit: z_marginals[k].quantile(*hi)? - attachment });
        }
        g.push(GFunctionSpec::LayerSum { terms });
    }
    let sigma = build_factor_sigma(&cfg.correlation, cfg.lambda, cfg.m_reins(), cfg.nu)?;
    let spec = LossModelSpec {
        x_marginals: vec![x; cfg.m_reins()],
        z_marginals,
        thresholds,
        g,
        dependence: DependenceSpec::MultivariateT(sigma),
        general_mode: false,
    };
    spec.validate()?;
    Ok(spec)
}

/// Sizes and settings of a reinsurance run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReinsuranceStudy {
    pub alphas: Vec<f64>,
    pub headline_alpha: f64,
    pub delta: f64,
    pub delta_sweep: Vec<f64>,
    pub n_scenarios: usize,
    /// Per reinsurer, scenarios with the default driver near its threshold.
    pub n_conditional: usize,
    pub bootstrap: BootstrapSpec,
    pub seed: SeedSpec,
    /// Quantile levels of the tail stresses on Z (upper) and X (lower).
    pub z_stress_level: f64,
    pub x_stress_level: f64,
}

impl Default for ReinsuranceStudy {
    fn default() -> Self {
        ReinsuranceStudy {
            alphas: vec![0.955, 0.96, 0.965, 0.97, 0.975, 0.98, 0.985, 0.99],
            headline_alpha: 0.975,
            delta: 0.005,
            delta_sweep: vec![0.0025, 0.005, 0.01],
            n_scenarios: 1_000_000,
            n_conditional: 200_000,
            bootstrap: BootstrapSpec { replicates: 50, fraction: 0.9, seed: SeedSpec(0) },
            seed: SeedSpec(0),
            z_stress_level: 0.8,
            x_stress_level: 0.2,
        }
    }
}

impl ReinsuranceStudy {
    /// Smoke-test scale: 10⁵ scenarios.
    pub fn quick() -> Self {
        ReinsuranceStudy {
            n_scenarios: 100_000,
            n_conditional: 20_000,
            bootstrap: BootstrapSpec { replicates: 20, fraction: 0.9, seed: SeedSpec(0) },
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinsuranceSummary {
    pub n_scenarios: usize,
    pub seed: SeedSpec,
    pub p_loss_positive: f64,
    pub p_loss_positive_stderr: f64,
    pub alpha: f64,
    pub var: f64,
    pub es: f64,
    /// Labels ordered from the largest sensitivity down, at the headline level.
    pub z_es_ranking: Vec<String>,
    pub z_var_ranking: Vec<String>,
    pub x_es_ranking: Vec<String>,
    pub x_var_ranking: Vec<String>,
}

/// One estimate of the δ sweep.
#[derive(Clone, Debug)]
pub struct DeltaRow {
    pub delta: f64,
    pub row: ResultRow,
}

#[derive(Clone, Debug)]
pub struct ReinsuranceResults {
    pub summary: ReinsuranceSummary,
    /// VaR and ES sensitivities to each line of business at the headline level.
    pub z_rows: Vec<ResultRow>,
    /// VaR and ES sensitivities to each reinsurer at the headline level.
    pub x_rows: Vec<ResultRow>,
    /// ES sensitivities to every factor at each level of `alphas`.
    pub alpha_rows: Vec<ResultRow>,
    pub delta_rows: Vec<DeltaRow>,
}

/// File names written by [`ReinsuranceResults::write`].
pub const REINSURANCE_FILES: [&str; 5] =
    ["fig2_z_sensitivities.csv", "fig3_x_sensitivities.csv", "fig4_es_by_alpha.csv", "fig5_delta_sweep.csv", "summary.json"];

impl ReinsuranceResults {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_results(fs::File::create(dir.join(REINSURANCE_FILES[0]))?, &self.z_rows)?;
        write_results(fs::File::create(dir.join(REINSURANCE_FILES[1]))?, &self.x_rows)?;
        write_results(fs::File::create(dir.join(REINSURANCE_FILES[2]))?, &self.alpha_rows)?;
        let mut w = csv::Writer::from_path(dir.join(REINSURANCE_FILES[3]))?;
        w.write_record(["delta", "target", "rm", "alpha", "value", "stderr", "ci_low", "ci_high"])?;
        let num = |x: f64| format!("{x:.16e}");
        for d in &self.delta_rows {
            let e = &d.row.estimate;
            w.write_record([
                num(d.delta),
                d.row.target.clone(),
                d.row.rm.name().to_string(),
                d.row.rm.alpha().map(num).unwrap_or_default(),
                num(e.value),
                num(e.stderr),
                num(e.ci_low),
                num(e.ci_high),
            ])?;
        }
        w.flush()?;
        fs::write(dir.join(REINSURANCE_FILES[4]), serde_json::to_string_pretty(&self.summary)? + "\n")?;
        Ok(())
    }
}

/// Labels sorted by decreasing value.
pub fn ranking(rows: &[ResultRow]) -> Vec<String> {
    let mut v: Vec<&ResultRow> = rows.iter().collect();
    v.sort_by(|a, b| b.estimate.value.total_cmp(&a.estimate.value));
    v.into_iter().map(|r| r.target.clone()).collect()
}

type Cases = Vec<(Factor, StressSpec)>;

fn tail_stresses(spec: &LossModelSpec, study: &ReinsuranceStudy) -> Result<(Cases, Cases)> {
    let z = spec
        .z_marginals
        .iter()
        .enumerate()
        .map(|(k, d)| Ok((Factor::Z(k), StressSpec::TailUpper { t: d.quantile(study.z_stress_level)? })))
        .collect::<Result<Vec<_>>>()?;
    let x = spec
        .x_marginals
        .iter()
        .enumerate()
        .map(|(j, d)| Ok((Factor::X(j), StressSpec::TailLower { t: d.quantile(study.x_stress_level)? })))
        .collect::<Result<Vec<_>>>()?;
    Ok((z, x))
}

fn rows(targets: &[(Factor, StressSpec)], rm: &RiskMeasureSpec, est: Vec<SensitivityEstimate>) -> Vec<ResultRow> {
    targets
        .iter()
        .zip(est)
        .map(|((f, s), e)| ResultRow { target: f.to_string(), rm: *rm, stress_type: s.name().to_string(), estimate: e })
        .collect()
}

/// Share of scenarios with a positive loss and its binomial standard error.
pub fn loss_probability(base: &ScenarioSet) -> (f64, f64) {
    let n = base.len() as f64;
    let p = base.loss.iter().filter(|l| **l > 0.0).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Marginal VaR and ES sensitivities to every line of business (upper tail
/// stress) and every reinsurer (lower tail stress), an ES level sweep and a
/// sweep of the band half-width.
pub fn run_reinsurance_study(cfg: &ReinsuranceConfig, study: &ReinsuranceStudy) -> Result<ReinsuranceResults> {
    let spec = build_reinsurance_model(cfg)?;
    let model = LossModel::new(&spec)?;
    let base = model.simulate(study.n_scenarios, study.seed)?;
    let (p, p_se) = loss_probability(&base);
    let (z_targets, x_targets) = tail_stresses(&spec, study)?;
    let reinsurers: Vec<usize> = (0..spec.m()).collect();

    let band = BandSpec { delta: study.delta };
    let cond = ConditionalSets::generate(&model, &reinsurers, &band, study.n_conditional, study.seed)?;
    let run = |targets: &[(Factor, StressSpec)], rm: &RiskMeasureSpec, band: &BandSpec, cond: &ConditionalSets| {
        marginal_sens_batch(&model, &base, cond, targets, rm, band, &study.bootstrap).map(|e| rows(targets, rm, e))
    };

    let alpha = study.headline_alpha;
    let (var, es) = (RiskMeasureSpec::Var { alpha }, RiskMeasureSpec::Es { alpha });
    let z_var = run(&z_targets, &var, &band, &cond)?;
    let z_es = run(&z_targets, &es, &band, &cond)?;
    let x_var = run(&x_targets, &var, &band, &cond)?;
    let x_es = run(&x_targets, &es, &band, &cond)?;

    let mut alpha_rows = Vec::new();
    for &a in &study.alphas {
        let rm = RiskMeasureSpec::Es { alpha: a };
        alpha_rows.extend(run(&z_targets, &rm, &band, &cond)?);
        alpha_rows.extend(run(&x_targets, &rm, &band, &cond)?);
    }

    let mut delta_rows = Vec::new();
    for &delta in &study.delta_sweep {
        let b = BandSpec { delta };
        let c = if delta == study.delta {
            cond.clone()
        } else {
            ConditionalSets::generate(&model, &reinsurers, &b, study.n_conditional, study.seed)?
        };
        for rm in [&var, &es] {
            delta_rows.extend(run(&x_targets, rm, &b, &c)?.into_iter().map(|row| DeltaRow { delta, row }));
        }
    }

    let summary = ReinsuranceSummary {
        n_scenarios: base.len(),
        seed: study.seed,
        p_loss_positive: p,
        p_loss_positive_stderr: p_se,
        alpha,
        var: empirical_quantile(&base.loss, alpha)?,
        es: risk_measure(&base.loss, &es)?,
        z_es_ranking: ranking(&z_es),
        z_var_ranking: ranking(&z_var),
        x_es_ranking: ranking(&x_es),
        x_var_ranking: ranking(&x_var),
    };
    Ok(ReinsuranceResults { summary, z_rows: [z_var, z_es].concat(), x_rows: [x_var, x_es].concat(), alpha_rows, delta_rows })
}

/// Empirical correlation of the Gaussian parts of the explicit factor
/// construction X_j = √λ·Ψ + √(1−λ)·Θ_j, Ψ = ΣZ̃_k/√β, Z̃ ~ N(0, R).
///
/// The common mixing variable of the t copula is left out: it does not change
/// the correlation parameters, and Pearson estimates under t(4) tails converge slowly.
pub fn factor_model_correlation(cfg: &ReinsuranceConfig, n: usize, seed: SeedSpec) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let (m, nz) = (cfg.m_reins(), cfg.n_lob());
    let d = m + nz;
    let r = nalgebra::DMatrix::from_fn(nz, nz, |i, j| cfg.correlation[i][j]);
    let chol = nalgebra::Cholesky::new(r).ok_or_else(|| invalid("the line-of-business correlation is not positive definite"))?;
    let l = chol.l();
    let beta: f64 = cfg.correlation.iter().flatten().sum();
    let (a, b) = (cfg.lambda.sqrt(), (1.0 - cfg.lambda).sqrt());
    // Per chunk: sums of each coordinate and of each pairwise product.
    let parts = par_chunks(n, seed, domain::SAMPLE, |s, rows| {
        let mut sum = vec![0.0; d];
        let mut prod = vec![0.0; d * d];
        let mut e = vec![0.0; nz];
        let mut v = vec![0.0; d];
        for _ in rows {
            for x in e.iter_mut() {
                *x = s.normal();
            }
            for k in 0..nz {
                v[m + k] = (0..=k).map(|c| l[(k, c)] * e[c]).sum();
            }
            let psi = v[m..].iter().sum::<f64>() / beta.sqrt();
            for x in v.iter_mut().take(m) {
                *x = a * psi + b * s.normal();
            }
            for i in 0..d {
                sum[i] += v[i];
                for j in 0..=i {
                    prod[i * d + j] += v[i] * v[j];
                }
            }
        }
        Ok((sum, prod))
    })?;
    let mut sum = vec![0.0; d];
    let mut prod = vec![0.0; d * d];
    for (s, p) in parts {
        sum.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        prod.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let nf = n as f64;
    let cov = |i: usize, j: usize| {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        prod[hi * d + lo] / nf - sum[i] * sum[j] / (nf * nf)
    };
    Ok((0..d).map(|i| (0..d).map(|j| cov(i, j) / (cov(i, i) * cov(j, j)).sqrt()).collect()).collect())
}
