mod common;

use quantsens::casestudy::{factor_model_correlation, run_compound_point, CompoundConfig, ReinsuranceConfig};
use quantsens::copula::build_factor_sigma;
use quantsens::estimators::{compound_freq_sens, discrete_sens, BandSpec, BootstrapSpec, RiskMeasureSpec};
use quantsens::model::{read_scenarios, simulate, write_scenarios};
use quantsens::oracle::Agreement;
use quantsens::rng::SeedSpec;
use quantsens::stress::StressSpec;

use common::*;

#[test]
fn scenarios_do_not_depend_on_thread_count() {
    let spec = two_obligor(mvt_dependence());
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate(&spec, 150_000, SeedSpec(7)).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn scenario_files_round_trip() {
    let spec = two_obligor(paired_dependence(quantsens::copula::BivariateCopulaSpec::Gaussian { r: 0.5 }));
    let set = simulate(&spec, 2_000, SeedSpec(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenarios.csv");
    write_scenarios(&set, &path).unwrap();
    let back = read_scenarios(&path, &spec).unwrap();
    assert_eq!(back.loss, set.loss);
    assert_eq!((back.x, back.z), (set.x, set.z));
}

#[test]
fn factor_construction_reproduces_the_copula_correlation() {
    let cfg = ReinsuranceConfig::default();
    let sigma = build_factor_sigma(&cfg.correlation, cfg.lambda, cfg.m_reins(), cfg.nu).unwrap().sigma;
    let empirical = factor_model_correlation(&cfg, 400_000, SeedSpec(5)).unwrap();
    for (row_s, row_e) in sigma.iter().zip(&empirical) {
        for (s, e) in row_s.iter().zip(row_e) {
            assert!((s - e).abs() < 0.01, "{s} vs {e}");
        }
    }
}

#[test]
fn scaled_compound_sensitivities_ignore_the_severity_scale() {
    let base = CompoundConfig::default();
    let scaled = CompoundConfig { severity_scale: 7.5, ..base.clone() };
    let a = run_compound_point(&base, 0.0, 50_000, SeedSpec(2)).unwrap();
    let b = run_compound_point(&scaled, 0.0, 50_000, SeedSpec(2)).unwrap();
    assert!((a.expected_shortfall * 7.5 - b.expected_shortfall).abs() <= 1e-8 * b.expected_shortfall);
    assert!((a.scaled_freq - b.scaled_freq).abs() <= 1e-8, "{} vs {}", a.scaled_freq, b.scaled_freq);
    assert!((a.scaled_sev - b.scaled_sev).abs() <= 1e-8, "{} vs {}", a.scaled_sev, b.scaled_sev);
}

#[test]
fn frequency_closed_form_agrees_with_the_general_estimator() {
    let dm = CompoundConfig::default().model().unwrap();
    let set = dm.simulate(200_000, SeedSpec(9)).unwrap();
    let closed = compound_freq_sens(&dm, &set, 0.95).unwrap();
    let boot = BootstrapSpec { replicates: 30, fraction: 0.9, seed: SeedSpec(10) };
    let general =
        discrete_sens(&dm, &set, &StressSpec::Wang { sign: 1 }, &RiskMeasureSpec::Es { alpha: 0.95 }, &BandSpec::default(), &boot).unwrap();
    let a = Agreement::new(general.value, general.stderr, closed.value, closed.stderr, 0.0, 2.0);
    assert!(a.passed, "{a:?}");
}
