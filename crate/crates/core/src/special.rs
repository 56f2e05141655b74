//! Standard normal CDF, log-CDF, density and quantile.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{domain, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Below this argument `erfc` starts to lose precision to subnormals.
const LOG_CDF_ASYMPTOTIC_BELOW: f64 = -37.0;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// ln Φ(x), finite for every finite `x`.
///
/// The upper tail goes through `ln_1p` of the complementary mass; the far
/// lower tail uses the Mills-ratio asymptotic series, which at |x| > 37 is
/// accurate to machine precision after a handful of terms.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-std_normal_cdf(-x)).ln_1p()
    } else if x > LOG_CDF_ASYMPTOTIC_BELOW {
        std_normal_cdf(x).ln()
    } else {
        log_cdf_lower_tail(x)
    }
}

fn log_cdf_lower_tail(x: f64) -> f64 {
    let z2 = 1.0 / (x * x);
    // 1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8 - 945/x^10
    let series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2 * (1.0 - 9.0 * z2))));
    -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// Φ⁻¹(p) for p in (0, 1).
///
/// Wichura's AS241 (PPND16) rational approximations, polished by one Newton
/// step on Φ.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("normal quantile requires 0 < p < 1, got {p}"));
    }
    let x = ppnd16(p);
    // Newton on the side of the distribution where the tail mass is small,
    // so the residual keeps its relative precision.
    let step = if x <= 0.0 {
        (std_normal_cdf(x) - p) / std_normal_pdf(x)
    } else {
        ((1.0 - p) - std_normal_cdf(-x)) / std_normal_pdf(x)
    };
    let refined = x - step;
    Ok(if refined.is_finite() { refined } else { x })
}

fn ppnd16(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        133.141_667_891_784_38,
        1_971.590_950_306_551_4,
        13_731.693_765_509_461,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_546,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_08,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_9,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];

    fn poly(c: &[f64; 8], r: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * r + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Normal density with mean `mu` and standard deviation `sd`.
pub fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}
