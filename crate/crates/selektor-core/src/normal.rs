//! Standard-normal primitives with far-tail stability.
//!
//! Everything downstream (truncated CDFs, pivots, chord sampling) reduces to
//! interval masses of the standard normal. Those are computed here in log
//! space through the scaled complementary error function, so ratios of
//! far-tail masses stay meaningful long after `erfc` itself underflows.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_2: f64 = std::f64::consts::LN_2;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Log of the standard normal density.
#[inline]
pub fn ln_pdf(x: f64) -> f64 {
    const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
    -0.5 * x * x - LN_SQRT_2PI
}

/// Scaled complementary error function `exp(x^2) * erfc(x)`.
///
/// Finite for every finite `x >= 0`, which is what makes the log-tail
/// formulas below work at arbitrary distance from the mean. For moderate
/// arguments libm's `erfc` is exact enough; past 8 the product under- and
/// overflows, so we switch to the asymptotic continued expansion.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // erfcx(-x) = 2 exp(x^2) - erfcx(x); only meaningful while exp(x^2)
        // is finite, which covers every caller (negative args are moderate).
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x <= 8.0 {
        return (x * x).exp() * libm::erfc(x);
    }
    // Asymptotic series: erfcx(x) ~ (1/(x sqrt(pi))) * sum_k (-1)^k (2k-1)!!/(2x^2)^k.
    // At x = 8 fifteen terms reach ~1e-16 relative error and the terms are
    // still decreasing, so truncation there is safe for all larger x.
    let inv2x2 = 1.0 / (2.0 * x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=15 {
        term *= -((2 * k - 1) as f64) * inv2x2;
        sum += term;
    }
    sum / (x * (PI).sqrt())
}

/// Standard normal CDF.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal survival function `P(Z > x)`.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `ln P(Z > x)`, stable for all finite `x`.
pub fn ln_sf(x: f64) -> f64 {
    if x <= 0.0 {
        let s = sf(x);
        // sf(x) >= 0.5 here, plain log is exact.
        return s.ln();
    }
    // ln sf(x) = ln erfcx(x/sqrt2) - x^2/2 - ln 2
    erfcx(x * FRAC_1_SQRT_2).ln() - 0.5 * x * x - LN_2
}

/// `ln P(a < Z < b)` for `a < b`, stable when both endpoints sit far out in
/// the same tail.
pub fn ln_interval_mass(a: f64, b: f64) -> f64 {
    debug_assert!(a < b || (a.is_nan() || b.is_nan()));
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return 0.0;
    }
    // Mirror so that the interval lies in the right tail or straddles zero.
    if b <= 0.0 {
        return ln_interval_mass(-b, -a);
    }
    if a >= 0.0 {
        // mass = sf(a) - sf(b) = sf(a) (1 - exp(ln sf(b) - ln sf(a)))
        let la = ln_sf(a);
        let lb = ln_sf(b);
        let diff = lb - la; // <= 0
        if diff >= 0.0 {
            return f64::NEG_INFINITY;
        }
        let one_minus = -f64::exp_m1(diff); // 1 - e^diff, accurate near 0
        if one_minus <= 0.0 {
            return f64::NEG_INFINITY;
        }
        return la + one_minus.ln();
    }
    // Straddles zero; mass is at least cdf(min(b,-a)) - 0.5 unless the
    // interval is microscopically thin, where a midpoint rectangle is exact
    // to first order.
    let width = b - a;
    if width < 1e-8 * (1.0 + a.abs().max(b.abs())) {
        let mid = 0.5 * (a + b);
        return width.ln() + ln_pdf(mid);
    }
    (cdf(b) - cdf(a)).ln()
}

/// Standard normal quantile, Wichura's AS 241 double-precision algorithm.
pub fn quantile(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0 && p.is_finite(),
        "normal quantile needs p in (0,1), got {p}"
    );
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&AS241_A, r) / poly(&AS241_B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        r -= 1.6;
        poly(&AS241_C, r) / poly(&AS241_D, r)
    } else {
        r -= 5.0;
        poly(&AS241_E, r) / poly(&AS241_F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// Inverse survival function: `x` with `P(Z > x) = s`.
#[inline]
pub fn inverse_sf(s: f64) -> f64 {
    -quantile(s)
}

#[inline]
fn poly(c: &[f64], x: f64) -> f64 {
    let mut acc = c[c.len() - 1];
    for &ci in c.iter().rev().skip(1) {
        acc = acc * x + ci;
    }
    acc
}

const AS241_A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const AS241_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const AS241_C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const AS241_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const AS241_E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const AS241_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((cdf(1.96) - 0.975_002_104_851_780_5).abs() < 1e-12);
        assert!((sf(3.0) - 1.349_898_031_630_094_6e-3).abs() < 1e-15);
    }

    #[test]
    fn ln_sf_matches_direct_in_body() {
        for &x in &[-3.0, -1.0, 0.0, 0.5, 2.0, 5.0, 7.9] {
            let direct = sf(x).ln();
            assert!(
                (ln_sf(x) - direct).abs() < 1e-12 * direct.abs().max(1.0),
                "x={x}"
            );
        }
    }

    #[test]
    fn ln_sf_far_tail_matches_mills_bounds() {
        // x/(1+x^2) phi(x) < sf(x) < phi(x)/x
        for &x in &[10.0, 20.0, 50.0, 100.0] {
            let l = ln_sf(x);
            let upper = ln_pdf(x) - x.ln();
            let lower = ln_pdf(x) + (x / (1.0 + x * x)).ln();
            assert!(l < upper && l > lower, "x={x} l={l}");
        }
    }

    /// Laplace continued fraction for erfcx, an independent reference.
    fn erfcx_cf(x: f64) -> f64 {
        let mut cf = 0.0f64;
        for k in (1..=300).rev() {
            cf = (k as f64 / 2.0) / (x + cf);
        }
        1.0 / (PI.sqrt() * (x + cf))
    }

    #[test]
    fn erfcx_both_routes_match_continued_fraction() {
        for &x in &[5.0, 7.9, 8.0, 8.1, 12.0, 40.0, 200.0] {
            let reference = erfcx_cf(x);
            assert!(
                (erfcx(x) - reference).abs() < 1e-13 * reference,
                "x={x}: {} vs {reference}",
                erfcx(x)
            );
        }
    }

    #[test]
    fn interval_mass_consistency() {
        // straddling interval vs direct difference
        let m = ln_interval_mass(-1.0, 2.0).exp();
        assert!((m - (cdf(2.0) - cdf(-1.0))).abs() < 1e-14);
        // one-sided tails
        assert!((ln_interval_mass(3.0, f64::INFINITY) - ln_sf(3.0)).abs() < 1e-13);
        // far tail ratio: P(40<Z<41)/P(40<Z) should match Mills-level math
        let r = (ln_interval_mass(40.0, 41.0) - ln_sf(40.0)).exp();
        assert!(r > 0.999_999 && r <= 1.0, "r={r}");
    }

    #[test]
    fn quantile_round_trips() {
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-10] {
            let x = quantile(p);
            assert!((cdf(x) - p).abs() < 1e-12 * p.max(1e-3), "p={p}");
        }
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }
}
