//! Standard normal distribution function, survival function and quantile.

// Published quantile-algorithm coefficients are kept digit for digit.
#![allow(clippy::excessive_precision)]

use libm::erfc;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Φ(x).
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), accurate in the upper tail.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// ln N(x; mean, var).
#[inline]
pub fn ln_density(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * z * z / var
}

#[inline]
pub fn pdf(x: f64) -> f64 {
    ln_pdf(x).exp()
}

/// Φ⁻¹(p) by Wichura's AS241 (PPND16), relative accuracy about 1e-16.
///
/// Tails are evaluated through `sqrt(-ln r)` so `p` down to the smallest
/// positive double is handled. Returns ±∞ at 0 and 1, NaN outside [0, 1].
pub fn quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r + 6.726_577_092_700_870_1e4)
                * r
                + 4.592_195_393_154_987_1e4)
                * r
                + 1.373_169_376_550_946e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r + 3.930_789_580_009_271e4)
                * r
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
    let r0 = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r0.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r + 2.417_807_251_774_506e-1) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_7e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_8)
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
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r + 1.846_318_317_510_054_8e-5)
                * r
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

/// Upper-tail quantile: the x with 1 − Φ(x) = q, without forming 1 − q.
pub fn quantile_upper(q: f64) -> f64 {
    -quantile(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn quantile_matches_reference_values() {
        assert_eq!(quantile(0.5), 0.0);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((quantile(cdf(1.0)) - 1.0).abs() < 1e-14);
        assert!((quantile(1e-6) + 4.753_424_308_822_899).abs() < 1e-12);
    }

    #[test]
    fn quantile_agrees_with_independent_implementation() {
        let reference = Normal::new(0.0, 1.0).unwrap();
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let a = quantile(p);
            let b = reference.inverse_cdf(p);
            assert!((a - b).abs() < 1e-9, "p={p}: {a} vs {b}");
        }
    }

    #[test]
    fn tails_are_finite_and_symmetric() {
        for &p in &[1e-300, 1e-100, 1e-20, 1e-10] {
            let lo = quantile(p);
            assert!(lo.is_finite());
            assert!((quantile_upper(p) + lo).abs() < 1e-12 * lo.abs());
            let back = cdf(lo);
            assert!(((back - p) / p).abs() < 1e-9, "p={p} back={back}");
        }
        assert!(quantile(-0.1).is_nan());
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn cdf_matches_high_precision_values() {
        // Reference values from 30-digit arithmetic.
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 2e-16);
        assert!((sf(3.0) / 1.349_898_031_630_094_6e-3 - 1.0).abs() < 1e-14);
        assert!((cdf(-10.0) / 7.619_853_024_160_525e-24 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn cdf_and_sf_are_complementary() {
        for i in -80..80 {
            let x = i as f64 / 10.0;
            assert!((cdf(x) + sf(x) - 1.0).abs() < 1e-15);
        }
    }
}
