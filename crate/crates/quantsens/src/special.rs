//! Scalar special functions used by the distribution primitives.

use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile, Wichura's AS241 (relative accuracy about 1e-16).
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r + 6.726_577_092_700_87e4) * r
                + 4.592_195_393_154_987e4)
                * r
                + 1.373_169_376_550_946e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r + 3.930_789_580_009_271e4) * r
                + 2.121_379_430_158_659_7e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r + 2.417_807_251_774_506e-1) * r + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r + 1.519_866_656_361_645_7e-2) * r
                + 1.481_039_764_274_800_8e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r + 1.242_660_947_388_078_4e-3) * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r + 1.846_318_317_510_054_8e-5) * r
                + 7.868_691_311_456_133e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_88e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Student-t with `nu` degrees of freedom (unit scale).
#[derive(Clone, Copy, Debug)]
pub struct StudentT {
    nu: f64,
    log_norm: f64,
}

impl StudentT {
    pub fn new(nu: f64) -> Self {
        let log_norm = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
        StudentT { nu, log_norm }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    fn is_four(&self) -> bool {
        self.nu == 4.0
    }

    pub fn pdf(&self, t: f64) -> f64 {
        if self.is_four() {
            let b = 1.0 + 0.25 * t * t;
            return 0.375 / (b * b * b.sqrt());
        }
        (self.log_norm - 0.5 * (self.nu + 1.0) * (t * t / self.nu).ln_1p()).exp()
    }

    /// P(T > |t|), accurate in relative terms far into the tail.
    pub fn tail(&self, t: f64) -> f64 {
        let a = t.abs();
        if self.is_four() {
            let root = (4.0 + a * a).sqrt();
            let w = a / root;
            let one_minus_w = 4.0 / (root * (root + a));
            return 0.25 * one_minus_w * one_minus_w * (2.0 + w);
        }
        let t2 = a * a;
        if t2 < self.nu {
            0.5 - 0.5 * beta_reg(0.5, 0.5 * self.nu, t2 / (self.nu + t2))
        } else {
            0.5 * beta_reg(0.5 * self.nu, 0.5, self.nu / (self.nu + t2))
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        if t < 0.0 {
            self.tail(t)
        } else {
            1.0 - self.tail(t)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        if p == 0.5 {
            return 0.0;
        }
        let target = p.min(1.0 - p);
        let x0 = if self.is_four() {
            let alpha = 4.0 * target * (1.0 - target);
            let sa = alpha.sqrt();
            2.0 * ((sa.acos() / 3.0).cos() / sa - 1.0).max(0.0).sqrt()
        } else {
            self.initial_tail_guess(target)
        };
        // Root of P(T > x) - target, increasing in x on (0, inf).
        let f = |x: f64| (target - self.tail(x), self.pdf(x));
        let mut hi = x0.max(1e-3) * 2.0;
        while f(hi).0 < 0.0 {
            hi *= 2.0;
        }
        let x = newton_bisect(f, 0.0, hi, x0, 1e-15, 200).unwrap_or(x0);
        if p < 0.5 {
            -x
        } else {
            x
        }
    }

    fn initial_tail_guess(&self, target: f64) -> f64 {
        let nu = self.nu;
        if target > 1e-3 {
            let z = -norm_quantile(target);
            let z2 = z * z;
            let g1 = (z2 + 1.0) * z / 4.0;
            let g2 = ((5.0 * z2 + 16.0) * z2 + 3.0) * z / 96.0;
            let g3 = (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) * z / 384.0;
            z + g1 / nu + g2 / (nu * nu) + g3 / (nu * nu * nu)
        } else {
            // P(T > t) ~ k t^{-nu} / nu with k the pdf's power-law constant.
            let log_k = self.log_norm + 0.5 * (nu + 1.0) * nu.ln();
            ((log_k - nu.ln() - target.ln()) / nu).exp()
        }
    }
}

/// Gamma(shape, scale = 1) cdf, upper tail, pdf and quantile.
#[derive(Clone, Copy, Debug)]
pub struct GammaFn {
    shape: f64,
    ln_gamma_shape: f64,
}

impl GammaFn {
    pub fn new(shape: f64) -> Self {
        GammaFn { shape, ln_gamma_shape: ln_gamma(shape) }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x.is_infinite() {
            1.0
        } else {
            gamma_lr(self.shape, x)
        }
    }

    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else if x.is_infinite() {
            0.0
        } else {
            gamma_ur(self.shape, x)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x == 0.0 {
            return if self.shape < 1.0 {
                f64::INFINITY
            } else if self.shape == 1.0 {
                1.0
            } else {
                0.0
            };
        }
        ((self.shape - 1.0) * x.ln() - x - self.ln_gamma_shape).exp()
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        let a = self.shape;
        let z = norm_quantile(p);
        let c = 1.0 / (9.0 * a);
        let wh = a * (1.0 - c + z * c.sqrt()).powi(3);
        let x0 = if wh > 0.0 && a > 0.3 {
            wh
        } else {
            // Small-x series: P(a, x) ~ x^a / Gamma(a + 1).
            ((p.ln() + ln_gamma(a + 1.0)) / a).exp()
        };
        let f = |x: f64| {
            let v = if p < 0.5 { self.cdf(x) - p } else { (1.0 - p) - self.sf(x) };
            (v, self.pdf(x))
        };
        let mut hi = x0.max(1e-300) * 2.0;
        while f(hi).0 < 0.0 {
            hi *= 2.0;
        }
        newton_bisect(f, 0.0, hi, x0, 1e-15, 300).unwrap_or(x0)
    }
}

/// Root of an increasing function bracketed by `[lo, hi]`.
///
/// `f` returns the value and derivative. Newton steps that leave the current
/// bracket are replaced by bisection. Returns `None` without convergence.
pub fn newton_bisect<F>(f: F, mut lo: f64, mut hi: f64, x0: f64, rel_tol: f64, max_iter: usize) -> Option<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = if x0 > lo && x0 < hi { x0 } else { 0.5 * (lo + hi) };
    for _ in 0..max_iter {
        let (v, d) = f(x);
        if v.is_nan() {
            return None;
        }
        if v == 0.0 {
            return Some(x);
        }
        if v < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - v / d;
        let tol = rel_tol * x.abs().max(f64::MIN_POSITIVE);
        if newton.is_finite() && newton > lo && newton < hi {
            if (newton - x).abs() <= tol {
                return Some(newton);
            }
            x = newton;
        } else {
            x = 0.5 * (lo + hi);
        }
        if hi - lo <= rel_tol * lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE) {
            return Some(0.5 * (lo + hi));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantile_reference_values() {
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-15);
        assert!((norm_quantile(0.5)).abs() < 1e-300);
        assert!((norm_quantile(1e-10) + 6.361_340_902_404_056).abs() < 1e-12);
        assert!((norm_quantile(0.999) - 3.090_232_306_167_813).abs() < 1e-13);
    }

    #[test]
    fn normal_roundtrip() {
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let x = norm_quantile(p);
            assert!((norm_cdf(x) - p).abs() < 1e-14 * p.min(1.0 - p), "p={p} err={}", norm_cdf(x) - p);
        }
        for e in 2..300 {
            let p = 10f64.powi(-e);
            let x = norm_quantile(p);
            assert!(((norm_cdf(x) - p) / p).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn t4_closed_form_matches_general_path() {
        let t4 = StudentT::new(4.0);
        for &x in &[-30.0, -3.0, -0.7, 0.0, 0.2, 1.5, 8.0, 200.0] {
            let exact =
                if x < 0.0 { 0.5 * beta_reg(2.0, 0.5, 4.0 / (4.0 + x * x)) } else { 1.0 - 0.5 * beta_reg(2.0, 0.5, 4.0 / (4.0 + x * x)) };
            assert!((t4.cdf(x) - exact).abs() < 1e-14 * exact.max(1e-3), "x={x}");
        }
        // Reference quantile of t(4) at 0.975.
        assert!((t4.quantile(0.975) - 2.776_445_105_197_798_7).abs() < 1e-12);
    }

    #[test]
    fn t_quantile_roundtrip_general_nu() {
        for &nu in &[3.0, 5.0, 7.0, 30.0] {
            let t = StudentT::new(nu);
            for &p in &[1e-9, 1e-4, 0.01, 0.2, 0.5, 0.7, 0.99, 1.0 - 1e-7] {
                let x = t.quantile(p);
                let back = t.cdf(x);
                let scale = p.min(1.0 - p);
                assert!((back - p).abs() < 1e-12 * scale.max(1e-3), "nu={nu} p={p}");
            }
        }
    }

    #[test]
    fn t_pdf_general_matches_t4_formula() {
        let general = StudentT::new(4.000_000_000_001);
        let t4 = StudentT::new(4.0);
        for &x in &[-5.0, -1.0, 0.0, 2.0] {
            assert!((general.pdf(x) - t4.pdf(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn gamma_quantile_roundtrip() {
        for &a in &[0.5, 1.0, 2.5, 5.0, 40.0] {
            let g = GammaFn::new(a);
            for &p in &[1e-8, 1e-3, 0.1, 0.5, 0.9, 0.999, 1.0 - 1e-9] {
                let x = g.quantile(p);
                let back = if p < 0.5 { g.cdf(x) } else { 1.0 - g.sf(x) };
                assert!((back - p).abs() < 1e-12 * p.min(1.0 - p).max(1e-4), "a={a} p={p}");
            }
        }
        // Exponential special case.
        let e = GammaFn::new(1.0);
        assert!((e.quantile(0.5) - std::f64::consts::LN_2).abs() < 1e-14);
    }
}
