//! Special functions: error function family, normal CDF in linear and log
//! space, log-gamma, and guarded logit/logistic.
//!
//! `erfc`/`erfcx` use W. J. Cody's rational Chebyshev approximations
//! (Math. Comp. 1969), which are accurate to full double precision. Tail
//! quantities are computed from `erfcx` so that `Φ(x)` keeps its relative
//! accuracy far below the mean.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Inputs to [`logit`] are clamped to `[LOGIT_GUARD, 1 - LOGIT_GUARD]`.
pub const LOGIT_GUARD: f64 = 1e-12;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

#[derive(Clone, Copy, PartialEq)]
enum ErfKind {
    Erfc,
    Erfcx,
}

const A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_376e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_098_6e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_6e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_460_5e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];

/// `exp(-x^2)` evaluated as `exp(-r^2) exp(-(x-r)(x+r))` with `r` a
/// 1/16-rounded copy of `x`, which avoids the rounding error of squaring.
fn exp_neg_square(x: f64) -> f64 {
    let r = (x * 16.0).trunc() / 16.0;
    let del = (x - r) * (x + r);
    (-r * r).exp() * (-del).exp()
}

fn calerf(x: f64, kind: ErfKind) -> f64 {
    const THRESH: f64 = 0.46875;
    const XSMALL: f64 = 1.11e-16;
    const XBIG: f64 = 26.543;
    const XHUGE: f64 = 6.71e7;
    const XMAX: f64 = 2.53e307;
    const XNEG: f64 = -26.628;

    let y = x.abs();
    let mut result;
    if y <= THRESH {
        let ysq = if y > XSMALL { y * y } else { 0.0 };
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        let erf = x * (num + A[3]) / (den + B[3]);
        result = 1.0 - erf;
        if kind == ErfKind::Erfcx {
            result *= ysq.exp();
        }
        return result;
    } else if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        result = (num + C[7]) / (den + D[7]);
        if kind == ErfKind::Erfc {
            result *= exp_neg_square(y);
        }
    } else {
        result = 0.0;
        let saturated = y >= XBIG && (kind == ErfKind::Erfc || y >= XMAX);
        if y >= XBIG && y >= XHUGE && !saturated {
            result = FRAC_1_SQRT_PI / y;
        } else if !saturated {
            let ysq = 1.0 / (y * y);
            let mut num = P[5] * ysq;
            let mut den = ysq;
            for i in 0..4 {
                num = (num + P[i]) * ysq;
                den = (den + Q[i]) * ysq;
            }
            result = ysq * (num + P[4]) / (den + Q[4]);
            result = (FRAC_1_SQRT_PI - result) / y;
            if kind == ErfKind::Erfc {
                result *= exp_neg_square(y);
            }
        }
    }
    if x < 0.0 {
        match kind {
            ErfKind::Erfc => result = 2.0 - result,
            ErfKind::Erfcx => {
                if x < XNEG {
                    result = f64::INFINITY;
                } else {
                    let r = (x * 16.0).trunc() / 16.0;
                    let del = (x - r) * (x + r);
                    let e = (r * r).exp() * del.exp();
                    result = (e + e) - result;
                }
            }
        }
    }
    result
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    calerf(x, ErfKind::Erfc)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    calerf(x, ErfKind::Erfcx)
}

pub fn erf(x: f64) -> f64 {
    1.0 - erfc(x)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn ln_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF `Φ(x)`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, accurate in both tails.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        f64::NAN
    } else if x < -1.0 {
        let t = -x * FRAC_1_SQRT_2;
        (0.5 * erfcx(t)).ln() - t * t
    } else {
        (-norm_cdf(-x)).ln_1p()
    }
}

/// `d/dx ln Φ(x) = φ(x) / Φ(x)`.
pub fn norm_cdf_log_slope(x: f64) -> f64 {
    if x < -1.0 {
        (2.0 / PI).sqrt() / erfcx(-x * FRAC_1_SQRT_2)
    } else {
        norm_pdf(x) / norm_cdf(x)
    }
}

/// `ln(e^a + e^b)`.
pub fn ln_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln logistic(x)`.
pub fn ln_logistic(x: f64) -> f64 {
    -softplus(-x)
}

/// Log-odds of `p`, with `p` clamped to `[LOGIT_GUARD, 1 - LOGIT_GUARD]` as a
/// numerical guard against upstream rounding.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_GUARD, 1.0 - LOGIT_GUARD);
    (p / (1.0 - p)).ln()
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + sum.ln()
}

/// `ln k!`.
pub fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// `ln C(n, k)`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // 40-digit reference values (mpmath), see tests/data/reference_values.py.
    const PHI_REFERENCE: [(f64, f64); 14] = [
        (-8.0, 6.220960574271784123515995e-16),
        (-6.5, 4.016000583859117808346145e-11),
        (-5.0, 2.866515718791939116737523e-7),
        (-3.0, 0.001349898031630094526651815),
        (-1.5, 0.06680720126885806600449404),
        (-1.0, 0.1586552539314570514147675),
        (-0.5, 0.3085375387259868963622954),
        (-1e-3, 0.499601057786088937407105),
        (0.0, 0.5),
        (0.3, 0.6179114221889526330722736),
        (1.0, 0.8413447460685429485852325),
        (2.5, 0.9937903346742238648330219),
        (5.0, 0.9999997133484281208060883),
        (8.0, 0.9999999999999993779039426),
    ];

    #[test]
    fn norm_cdf_matches_reference() {
        for (x, want) in PHI_REFERENCE {
            let got = norm_cdf(x);
            assert!((got - want).abs() <= 1e-12, "Phi({x}) = {got}, want {want}");
            // Relative accuracy holds in the lower tail too.
            if x < 0.0 {
                assert_relative_eq!(got, want, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn ln_norm_cdf_far_tail() {
        assert_relative_eq!(
            ln_norm_cdf(-20.0),
            2.753624118606233695075623e-89f64.ln(),
            max_relative = 1e-13
        );
        assert_relative_eq!(
            ln_norm_cdf(-37.0),
            5.725571222524576822683193e-300f64.ln(),
            max_relative = 1e-13
        );
        // Beyond the double range of Φ itself.
        let x = -50.0f64;
        let asymptotic = -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + (-1.0 / (x * x)).ln_1p();
        assert_relative_eq!(ln_norm_cdf(x), asymptotic, max_relative = 1e-6);
        assert!(ln_norm_cdf(10.0) < 0.0 && ln_norm_cdf(10.0) > -1e-20);
    }

    #[test]
    fn log_slope_matches_finite_difference() {
        for x in [-30.0, -6.0, -1.2, -0.3, 0.0, 0.7, 3.0, 9.0] {
            let h = 1e-5;
            let fd = (ln_norm_cdf(x + h) - ln_norm_cdf(x - h)) / (2.0 * h);
            assert_relative_eq!(
                norm_cdf_log_slope(x),
                fd,
                max_relative = 1e-7,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn erfcx_is_continuous_across_branches() {
        for x in [-0.46875, 0.46875, 4.0, -4.0] {
            let lo = erfcx(x - 1e-12);
            let hi = erfcx(x + 1e-12);
            assert_relative_eq!(lo, hi, max_relative = 1e-10);
        }
        assert_relative_eq!(erf(0.5), 0.520_499_877_813_046_5, max_relative = 1e-15);
    }

    #[test]
    fn ln_gamma_against_exact_factorials() {
        let mut ln_fact = 0.0f64;
        for k in 1..=170u64 {
            ln_fact += (k as f64).ln();
            assert_relative_eq!(ln_factorial(k), ln_fact, max_relative = 1e-13);
        }
        assert_eq!(ln_factorial(0), 0.0);
        assert_relative_eq!(ln_gamma(0.5), PI.sqrt().ln(), max_relative = 1e-14);
        assert_relative_eq!(ln_choose(10, 5), 252f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn logit_guard_and_logistic() {
        assert_eq!(logit(0.0), logit(LOGIT_GUARD));
        assert!(logit(1.0).is_finite());
        assert!(logit(1.0) > 27.0 && logit(0.0) < -27.0);
        for x in [-3.0, 0.0, 2.5, 9.0] {
            assert!((logit(logistic(x)) - x).abs() < 1e-9);
        }
        for x in [-40.0, -3.0, 0.0, 2.5, 40.0] {
            assert_relative_eq!(ln_logistic(x), logistic(x).ln(), max_relative = 1e-12);
        }
    }
}
