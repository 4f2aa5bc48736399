mod common;

use proptest::prelude::*;

use quantsens::copula::{BivariateCopulaSpec, GeneratorSpec};
use quantsens::distributions::DistributionSpec;
use quantsens::estimators::{risk_measure, RiskMeasureSpec};
use quantsens::stress::{StressSpec, DEFAULT_EPS0};

fn continuous_marginal() -> impl Strategy<Value = DistributionSpec> {
    prop_oneof![
        (-5.0..5.0f64, 0.1..5.0f64).prop_map(|(mean, sd)| DistributionSpec::Normal { mean, sd }),
        (-1.0..1.0f64, 0.1..1.5f64).prop_map(|(mu, sigma)| DistributionSpec::Lognormal { mu, sigma }),
        (0.3..30.0f64, 0.1..10.0f64).prop_map(|(shape, scale)| DistributionSpec::Gamma { shape, scale }),
        (1u32..12, any::<bool>()).prop_map(|(nu, standardised)| DistributionSpec::StudentT { nu, standardised: standardised && nu > 2 }),
        Just(DistributionSpec::Uniform01),
    ]
}

fn bivariate_copula() -> impl Strategy<Value = BivariateCopulaSpec> {
    prop_oneof![
        (-0.95..0.95f64).prop_map(|r| BivariateCopulaSpec::Gaussian { r }),
        (-0.9..0.9f64, 1u32..10).prop_map(|(r, nu)| BivariateCopulaSpec::StudentT { r, nu }),
        (0.1..8.0f64).prop_map(|theta| BivariateCopulaSpec::Archimedean { generator: GeneratorSpec::Clayton { theta } }),
        (1.05..5.0f64).prop_map(|theta| BivariateCopulaSpec::Archimedean { generator: GeneratorSpec::Gumbel { theta } }),
    ]
}

fn nonzero(bound: f64) -> impl Strategy<Value = f64> {
    (-bound..bound).prop_filter("stresses need a non-zero beta", |b: &f64| b.abs() > 1e-3)
}

/// Each stress family with a point of its domain.
fn stress_and_point() -> impl Strategy<Value = (StressSpec, f64)> {
    let x = -20.0..20.0f64;
    prop_oneof![
        (nonzero(5.0), x.clone()).prop_map(|(beta, x)| (StressSpec::Additive { beta }, x)),
        (-3.0..3.0f64, x.clone()).prop_map(|(t, x)| (StressSpec::TailUpper { t }, x)),
        (-3.0..3.0f64, x.clone()).prop_map(|(t, x)| (StressSpec::TailLower { t }, x)),
        (nonzero(0.9), -2.0..2.0f64).prop_map(|(beta, x)| (StressSpec::Probability { beta, marginal: common::std_normal() }, x)),
        (nonzero(2.0), 0.0..50.0f64).prop_map(|(beta, x)| (StressSpec::Proportional { beta }, x)),
        (prop_oneof![Just(1i8), Just(-1i8)], 0.001..0.999f64).prop_map(|(sign, u)| (StressSpec::Wang { sign }, u)),
    ]
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(d in continuous_marginal(), p in 1e-6..(1.0 - 1e-6)) {
        let x = d.quantile(p).unwrap();
        prop_assert!((d.cdf(x).unwrap() - p).abs() <= 1e-9, "{d:?} at {p}");
    }

    #[test]
    fn conditional_inverse_round_trips(cop in bivariate_copula(), ui in 0.001..0.999f64, v in 0.001..0.999f64) {
        // Strong tail dependence flattens the conditional cdf, so the
        // round trip is checked on the level, where it is well conditioned.
        let uj = cop.cond_inv(v, ui).unwrap();
        prop_assert!(uj > 0.0 && uj < 1.0);
        let back = cop.cond_cdf(uj, ui).unwrap();
        prop_assert!((back - v).abs() <= 1e-9, "{cop:?}: {v} -> {uj} -> {back}");
    }

    #[test]
    fn stresses_invert_and_keep_their_direction((s, x) in stress_and_point(), frac in 0.0..1.0f64) {
        prop_assume!(s.in_domain(x));
        let eps = frac * s.max_eps().min(DEFAULT_EPS0);
        let y = s.apply(eps, x).unwrap();
        let back = s.inverse_apply(eps, y).unwrap();
        prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0), "{s:?}: {x} -> {y} -> {back}");
        prop_assert!((y - x) * s.direction().unwrap() >= -1e-12);
    }

    #[test]
    fn risk_measures_are_ordered_and_translation_equivariant(
        losses in prop::collection::vec(-100.0..100.0f64, 20..400),
        alpha in 0.5..0.99f64,
        shift in -50.0..50.0f64,
        scale in 0.1..10.0f64,
    ) {
        let var = RiskMeasureSpec::Var { alpha };
        let es = RiskMeasureSpec::Es { alpha };
        prop_assert!(risk_measure(&losses, &es).unwrap() >= risk_measure(&losses, &var).unwrap() - 1e-12);
        let moved: Vec<f64> = losses.iter().map(|l| scale * l + shift).collect();
        for rm in [var, es, RiskMeasureSpec::Mean] {
            let expect = scale * risk_measure(&losses, &rm).unwrap() + shift;
            let got = risk_measure(&moved, &rm).unwrap();
            prop_assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1.0), "{rm:?}: {got} vs {expect}");
        }
    }
}
