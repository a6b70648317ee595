//! Log-gamma, digamma and trigamma for positive reals.

use std::f64::consts::PI;

use super::NumericsError;

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

// Below this the asymptotic series is not accurate enough; lift by recurrence.
const ASYMPTOTIC_FROM: f64 = 10.0;

fn check_domain(x: f64) -> Result<(), NumericsError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::Domain { x })
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn lgamma(x: f64) -> Result<f64, NumericsError> {
    check_domain(x)?;
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64, NumericsError> {
    check_domain(x)?;
    let mut x = x;
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2n / (2n x^2n), n = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    Ok(shift + x.ln() - 0.5 * inv - series)
}

/// `ψ'(x)` for `x > 0`. Needed for the gradient of the Dirichlet KL term.
pub fn trigamma(x: f64) -> Result<f64, NumericsError> {
    check_domain(x)?;
    let mut x = x;
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0
                        - inv2
                            * (1.0 / 42.0
                                - inv2
                                    * (1.0 / 30.0
                                        - inv2
                                            * (5.0 / 66.0
                                                - inv2 * (691.0 / 2_730.0 - inv2 * 7.0 / 6.0))))));
    Ok(shift + series)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from a 40-digit arbitrary-precision evaluation.
    const TABLE: [(f64, f64, f64); 15] = [
        (0.001, 6.907_178_885_383_853_682_5, -1_000.575_571_931_810_300_5),
        (0.01, 4.599_479_878_042_021_722_5, -100.560_885_457_868_674_5),
        (0.1, 2.252_712_651_734_205_959_9, -10.423_754_940_411_076_795),
        (0.5, 0.572_364_942_924_700_087_07, -1.963_510_026_021_423_479_4),
        (1.0, 0.0, -0.577_215_664_901_532_860_61),
        (1.5, -0.120_782_237_635_245_222_35, 0.036_489_973_978_576_520_559),
        (2.0, 0.0, 0.422_784_335_098_467_139_39),
        (3.7, 1.428_072_326_665_387_921_9, 1.167_153_539_361_511_385_9),
        (4.0, 1.791_759_469_228_055_000_8, 1.256_117_668_431_800_472_7),
        (6.0, 4.787_491_742_782_045_994_2, 1.706_117_668_431_800_472_7),
        (10.0, 12.801_827_480_081_469_611, 2.251_752_589_066_721_107_6),
        (25.5, 56.389_167_643_719_946_744, 3.218_942_472_883_919_766_5),
        (100.0, 359.134_205_369_575_398_78, 4.600_161_852_738_087_400_2),
        (999.9, 5_904.529_702_692_284_005_7, 6.907_155_140_626_809_030_0),
        (1000.0, 5_905.220_423_209_181_211_8, 6.907_255_195_648_812_052_1),
    ];

    #[test]
    fn matches_reference_table() {
        for &(x, lg, dg) in &TABLE {
            let a = lgamma(x).unwrap();
            let b = digamma(x).unwrap();
            assert!((a - lg).abs() <= 1e-10, "lgamma({x}) = {a}, want {lg}");
            assert!((b - dg).abs() <= 1e-10, "digamma({x}) = {b}, want {dg}");
        }
    }

    #[test]
    fn known_constants() {
        assert!(lgamma(1.0).unwrap().abs() < 1e-14);
        assert!((lgamma(4.0).unwrap() - 6f64.ln()).abs() < 1e-13);
        assert!((lgamma(0.5).unwrap() - PI.sqrt().ln()).abs() < 1e-13);
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0).unwrap() + euler).abs() < 1e-13);
        assert!((digamma(2.0).unwrap() - (1.0 - euler)).abs() < 1e-13);
        assert!((digamma(4.0).unwrap() - (1.0 - euler + 0.5 + 1.0 / 3.0)).abs() < 1e-13);
        assert!((trigamma(1.0).unwrap() - PI * PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn recurrences_on_log_grid() {
        let mut x: f64 = 1e-3;
        while x <= 1e3 {
            let dl = lgamma(x + 1.0).unwrap() - lgamma(x).unwrap();
            assert!((dl - x.ln()).abs() < 1e-10, "lgamma recurrence at {x}");
            let dd = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!((dd - 1.0 / x).abs() < 1e-10, "digamma recurrence at {x}");
            let dt = trigamma(x).unwrap() - trigamma(x + 1.0).unwrap();
            assert!(((dt - 1.0 / (x * x)) * x * x).abs() < 1e-10, "trigamma recurrence at {x}");
            x *= 1.37;
        }
    }

    #[test]
    fn trigamma_is_digamma_derivative() {
        for &x in &[0.3, 1.0, 2.5, 7.0, 40.0] {
            let h = 1e-5;
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            let t = trigamma(x).unwrap();
            assert!(((fd - t) / t).abs() < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn domain_errors() {
        assert!(lgamma(0.0).is_err());
        assert!(lgamma(-1.5).is_err());
        assert!(digamma(0.0).is_err());
        assert!(trigamma(f64::NAN).is_err());
    }
}
