//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Statistical criteria are reported rather than enforced so that a known
//! shortfall does not hide the others; set `ACCEPTANCE_STRICT=1` to exit
//! nonzero on any failure.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use quantsens::casestudy::{
    run_compound_point, run_compound_study, run_reinsurance_study, CompoundConfig, ReinsuranceConfig, ReinsuranceResults, ReinsuranceStudy,
    Sweep,
};
use quantsens::copula::{BivariateCopulaSpec, DependenceSpec};
use quantsens::estimators::{
    cascade_sens, discrete_sens, empirical_quantile, marginal_sens, marginal_sens_batch, BandSpec, BootstrapSpec, ConditionalSets,
    RiskMeasureSpec,
};
use quantsens::model::{Factor, GFunctionSpec, LossModel, Mode};
use quantsens::oracle::{brute_force_discrete, fd_from_losses, stressed_losses, Agreement, DEFAULT_EPS_GRID, DEFAULT_FD_SCENARIOS};
use quantsens::rng::SeedSpec;
use quantsens::stress::StressSpec;

use common::*;

type Outcome = Result<String, String>;

const GATE_REL_TOL: f64 = 0.05;
const GATE_K_SIGMA: f64 = 2.0;

fn gate_measures() -> [RiskMeasureSpec; 3] {
    [RiskMeasureSpec::Var { alpha: 0.95 }, RiskMeasureSpec::Es { alpha: 0.95 }, RiskMeasureSpec::Mean]
}

fn gate_bootstrap() -> BootstrapSpec {
    BootstrapSpec { replicates: 50, fraction: 0.9, seed: SeedSpec(14) }
}

fn err(e: quantsens::Error) -> String {
    e.to_string()
}

fn compound_baseline() -> Outcome {
    let cfg = CompoundConfig::default();
    let start = Instant::now();
    let p = run_compound_point(&cfg, cfg.skewness(), 1_000_000, SeedSpec(1)).map_err(err)?;
    let elapsed = start.elapsed();
    let detail = format!("frequency {:.4} (0.414), severity {:.4} (0.429), {:.0} s", p.scaled_freq, p.scaled_sev, elapsed.as_secs_f64());
    if (p.scaled_freq - 0.414).abs() <= 0.02 && (p.scaled_sev - 0.429).abs() <= 0.02 && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reinsurance_headline(results: &ReinsuranceResults, elapsed: Duration) -> Outcome {
    let s = &results.summary;
    let detail = format!(
        "P(L>0) = {:.4}% ± {:.4} at n = {}, full study {:.0} s",
        100.0 * s.p_loss_positive,
        100.0 * s.p_loss_positive_stderr,
        s.n_scenarios,
        elapsed.as_secs_f64()
    );
    if (s.p_loss_positive - 0.05044).abs() <= 0.003 && elapsed < Duration::from_secs(300) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Estimates against Richardson-extrapolated finite differences on a
/// separate, larger sample.
#[allow(clippy::too_many_arguments)]
fn factor_gate(
    label: &str,
    spec: &quantsens::model::LossModelSpec,
    cases: &[(Factor, StressSpec)],
    mode: Mode,
    seeds: (u64, u64, u64),
    n_cond: usize,
    failures: &mut Vec<String>,
) -> Result<usize, String> {
    let model = LossModel::new(spec).map_err(err)?;
    let band = BandSpec::default();
    let boot = gate_bootstrap();
    let fd_base = model.simulate(DEFAULT_FD_SCENARIOS, SeedSpec(seeds.0)).map_err(err)?;
    let base = model.simulate(1_000_000, SeedSpec(seeds.1)).map_err(err)?;
    let cascade = mode == Mode::Cascade;
    let mut indices = Vec::new();
    for (f, _) in cases {
        indices.extend(ConditionalSets::required(&model, *f, cascade).map_err(err)?);
    }
    let cond = ConditionalSets::generate(&model, &indices, &band, n_cond, SeedSpec(seeds.2)).map_err(err)?;

    let rms = gate_measures();
    let mut estimates = BTreeMap::new();
    if !cascade {
        for (r, rm) in rms.iter().enumerate() {
            let est = marginal_sens_batch(&model, &base, &cond, cases, rm, &band, &boot).map_err(err)?;
            for (c, e) in est.into_iter().enumerate() {
                estimates.insert((c, r), e);
            }
        }
    }
    let mut checked = 0;
    for (c, (target, stress)) in cases.iter().enumerate() {
        let stressed = stressed_losses(&model, &fd_base, *target, stress, mode, &DEFAULT_EPS_GRID).map_err(err)?;
        for (r, rm) in rms.iter().enumerate() {
            let est = match estimates.remove(&(c, r)) {
                Some(e) => e,
                None => cascade_sens(&model, &base, &cond, *target, stress, rm, &band, &boot).map_err(err)?,
            };
            let mut fd = fd_from_losses(&fd_base, &stressed, *target, stress, rm, mode, &DEFAULT_EPS_GRID).map_err(err)?;
            let a = fd.compare(&est, GATE_REL_TOL, GATE_K_SIGMA);
            checked += 1;
            if !a.passed {
                failures.push(format!(
                    "{label} {target} {} {}: {:.5} vs {:.5} (tol {:.5})",
                    stress.name(),
                    rm.name(),
                    a.estimate,
                    a.reference,
                    a.tolerance
                ));
            }
        }
    }
    Ok(checked)
}

fn oracle_gate() -> Outcome {
    let mut failures = Vec::new();
    let spec = two_obligor(mvt_dependence());
    let marginal = factor_gate("marginal", &spec, &marginal_gate_cases(&spec), Mode::Marginal, (11, 12, 13), 200_000, &mut failures)?;

    let spec = two_obligor(paired_dependence(BivariateCopulaSpec::StudentT { r: -0.6, nu: 4 }));
    let cascade = factor_gate("cascade", &spec, &cascade_gate_cases(&spec), Mode::Cascade, (21, 22, 23), 400_000, &mut failures)?;

    let dm = atom_compound();
    let set = dm.simulate(1_000_000, SeedSpec(31)).map_err(err)?;
    let mut discrete = 0;
    for stress in discrete_gate_stresses() {
        for rm in [RiskMeasureSpec::Es { alpha: 0.9 }, RiskMeasureSpec::Mean] {
            let est = discrete_sens(&dm, &set, &stress, &rm, &BandSpec::default(), &gate_bootstrap()).map_err(err)?;
            let exact = brute_force_discrete(&dm, &stress, &rm, &DEFAULT_EPS_GRID).map_err(err)?;
            let a = Agreement::new(est.value, est.stderr, exact.derivative, 0.0, 0.0, 3.0);
            discrete += 1;
            if !a.passed {
                failures.push(format!(
                    "discrete {} {}: {:.5} vs exact {:.5} (tol {:.5})",
                    stress.name(),
                    rm.name(),
                    a.estimate,
                    a.reference,
                    a.tolerance
                ));
            }
        }
    }
    let detail = format!("{marginal} marginal, {cascade} cascade, {discrete} discrete comparisons");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {} failed: {}", failures.len(), failures.join("; ")))
    }
}

fn psi1_gate() -> Outcome {
    let gaps: Vec<(&str, f64)> = psi_families().into_iter().map(|(name, cop)| (name, psi1_max_gap(&cop))).collect();
    let detail = gaps.iter().map(|(n, g)| format!("{n} {g:.1e}")).collect::<Vec<_>>().join(", ");
    if gaps.iter().all(|(_, g)| *g <= 1e-5) {
        Ok(format!("max gaps {detail}"))
    } else {
        Err(format!("max gaps {detail}"))
    }
}

fn euler_identity() -> Outcome {
    let mut spec = two_obligor(mvt_dependence());
    spec.g = vec![GFunctionSpec::Identity { z_index: 0 }, GFunctionSpec::Identity { z_index: 1 }];
    let model = LossModel::new(&spec).map_err(err)?;
    let base = model.simulate(200_000, SeedSpec(41)).map_err(err)?;
    let band = BandSpec::default();
    let cond = ConditionalSets::new(band.delta);
    let alpha = 0.95;
    let rm = RiskMeasureSpec::Es { alpha };
    let q = empirical_quantile(&base.loss, alpha).map_err(err)?;
    let mut worst: f64 = 0.0;
    for k in 0..2 {
        let est =
            marginal_sens(&model, &base, &cond, Factor::Z(k), &StressSpec::Proportional { beta: 1.0 }, &rm, &band, &BootstrapSpec::none())
                .map_err(err)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for r in 0..base.len() {
            if base.loss[r] >= q {
                count += 1;
                if base.x[k][r] <= spec.thresholds[k] {
                    sum += base.z[k][r];
                }
            }
        }
        let direct = sum / count as f64;
        worst = worst.max((est.value - direct).abs() / direct.abs().max(1.0));
    }
    let detail = format!("largest relative gap {worst:.1e}");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn stress_axioms() -> Outcome {
    let suite = stress_suite();
    let failures: Vec<String> = suite.iter().filter_map(|(s, xs)| check_stress_axioms(s, xs).err()).collect();
    if failures.is_empty() {
        Ok(format!("{} parametrised stresses", suite.len()))
    } else {
        Err(failures.join("; "))
    }
}

fn coincidence() -> Outcome {
    let spec = two_obligor(DependenceSpec::Independence);
    let model = LossModel::new(&spec).map_err(err)?;
    let band = BandSpec::default();
    let base = model.simulate(400_000, SeedSpec(51)).map_err(err)?;
    let cond = ConditionalSets::generate(&model, &[0, 1], &band, 100_000, SeedSpec(52)).map_err(err)?;
    let boot = BootstrapSpec { replicates: 30, fraction: 0.9, seed: SeedSpec(53) };
    let cases = marginal_gate_cases(&spec);
    let mut failures = Vec::new();
    for (target, stress) in &cases {
        for rm in gate_measures() {
            let m = marginal_sens(&model, &base, &cond, *target, stress, &rm, &band, &boot).map_err(err)?;
            let c = cascade_sens(&model, &base, &cond, *target, stress, &rm, &band, &boot).map_err(err)?;
            let a = Agreement::new(c.value, c.stderr, m.value, m.stderr, 0.0, 2.0);
            if !a.passed {
                failures.push(format!("{target} {} {}: {:.5} vs {:.5}", stress.name(), rm.name(), c.value, m.value));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("{} target/stress pairs, VaR, ES and mean", cases.len()))
    } else {
        Err(failures.join("; "))
    }
}

fn position(ranking: &[String], label: &str) -> usize {
    ranking.iter().position(|l| l == label).unwrap_or(usize::MAX)
}

fn reinsurance_ranks(results: &ReinsuranceResults) -> Outcome {
    let s = &results.summary;
    let mut failures = Vec::new();
    if s.z_es_ranking.first().map(String::as_str) != Some("Z6") {
        failures.push(format!("top line of business under ES is {:?}", s.z_es_ranking.first()));
    }
    let mut bottom: Vec<&str> = s.z_es_ranking.iter().rev().take(4).map(String::as_str).collect();
    bottom.sort_unstable();
    if bottom != ["Z2", "Z4", "Z7", "Z8"] {
        failures.push(format!("bottom four under ES are {bottom:?}"));
    }
    for x in ["X7", "X8"] {
        let (es, var) = (position(&s.x_es_ranking, x), position(&s.x_var_ranking, x));
        if es >= var {
            failures.push(format!("{x} ranks {} under ES and {} under VaR", es + 1, var + 1));
        }
    }

    // (delta, value, stderr) per target and risk measure.
    type DeltaPoints = Vec<(f64, f64, f64)>;
    let mut by_case: BTreeMap<(String, &str), DeltaPoints> = BTreeMap::new();
    for d in &results.delta_rows {
        by_case.entry((d.row.target.clone(), d.row.rm.name())).or_default().push((d.delta, d.row.estimate.value, d.row.estimate.stderr));
    }
    let mut sweep_failures = 0;
    for ((target, rm), v) in &by_case {
        for (i, a) in v.iter().enumerate() {
            for b in &v[i + 1..] {
                if (a.1 - b.1).abs() > 2.0 * a.2.hypot(b.2) {
                    sweep_failures += 1;
                    failures.push(format!("{target} {rm}: {:.4} at delta {} vs {:.4} at delta {}", a.1, a.0, b.1, b.0));
                }
            }
        }
    }
    let detail = format!(
        "ES ranking {}; X ES {}; X VaR {}; {} of the delta-sweep pairs disagree",
        s.z_es_ranking.join(" "),
        s.x_es_ranking.join(" "),
        s.x_var_ranking.join(" "),
        sweep_failures
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn compound_sweep_monotonicity() -> Outcome {
    let base = CompoundConfig::default();
    let n = 200_000;
    let mut rhos = Vec::new();
    for (sweep, pick) in [(Sweep::Skewness, true), (Sweep::Overdispersion, false)] {
        let grid = sweep.default_grid();
        let points = run_compound_study(&base, sweep, &grid, n, SeedSpec(1)).map_err(err)?;
        let curve: Vec<f64> = points.iter().map(|p| if pick { p.scaled_sev } else { p.scaled_freq }).collect();
        rhos.push((sweep.name(), spearman(&curve, &grid)));
    }
    let detail = rhos.iter().map(|(n, r)| format!("{n} rho {r:.3}")).collect::<Vec<_>>().join(", ");
    if rhos.iter().all(|(_, r)| *r > 0.9) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn report(number: usize, outcome: Outcome) -> bool {
    match outcome {
        Ok(detail) => {
            println!("criterion {number} PASS: {detail}");
            true
        }
        Err(detail) => {
            println!("criterion {number} FAIL: {detail}");
            false
        }
    }
}

fn main() {
    let mut passed = Vec::new();
    passed.push(report(1, compound_baseline()));

    let start = Instant::now();
    let study = run_reinsurance_study(&ReinsuranceConfig::default(), &ReinsuranceStudy::default());
    let elapsed = start.elapsed();
    let study = study.map_err(err);
    passed.push(report(2, study.as_ref().map_err(Clone::clone).and_then(|r| reinsurance_headline(r, elapsed))));

    passed.push(report(3, oracle_gate()));
    passed.push(report(4, psi1_gate()));
    passed.push(report(5, euler_identity()));
    passed.push(report(6, stress_axioms()));
    passed.push(report(7, coincidence()));
    passed.push(report(8, study.as_ref().map_err(Clone::clone).and_then(reinsurance_ranks)));
    passed.push(report(9, compound_sweep_monotonicity()));

    let failed = passed.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria pass", passed.len() - failed, passed.len());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
