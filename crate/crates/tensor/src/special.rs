//! Log-gamma and digamma for positive real arguments.

use std::f64::consts::PI;

/// Lanczos parameter `g`.
const LANCZOS_G: f64 = 7.0;

/// Lanczos series coefficients for `g = 7`, nine terms.
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
///
/// Uses the Lanczos approximation for `x >= 0.5` and the reflection formula
/// below that. Returns NaN outside the domain; callers check the domain.
pub fn lgamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x < 0.5 {
        // Γ(x)Γ(1-x) = π / sin(πx), with sin(πx) > 0 on (0, 0.5).
        return (PI / (PI * x).sin()).ln() - lgamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut series = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        series += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
///
/// Shifts the argument above 10 with `ψ(x) = ψ(x + 1) - 1/x`, then applies the
/// asymptotic expansion.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + x.ln() - 0.5 * inv - tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lgamma_factorial_identity() {
        assert!((lgamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((lgamma(1.0)).abs() < 1e-14);
        assert!((lgamma(2.0)).abs() < 1e-14);
        assert!((lgamma(11.0) - 3_628_800f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn lgamma_half_matches_ln_sqrt_pi() {
        let oracle = 0.5 * PI.ln();
        assert!((lgamma(0.5) - oracle).abs() < 1e-10);
        assert!((lgamma(0.5) - 0.572_364_9).abs() < 1e-7);
    }

    #[test]
    fn lgamma_small_argument_uses_reflection() {
        // Γ(0.25) = 3.625609908221908...
        assert!((lgamma(0.25) - 3.625_609_908_221_908_3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lgamma_rejects_non_positive() {
        assert!(lgamma(0.0).is_nan());
        assert!(lgamma(-1.5).is_nan());
    }

    #[test]
    fn digamma_known_values() {
        // ψ(1) = -γ
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-12);
        // ψ(0.5) = -γ - 2 ln 2
        assert!((digamma(0.5) + euler + 2.0 * 2f64.ln()).abs() < 1e-12);
        // ψ(n+1) = H_n - γ
        let h4 = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
        assert!((digamma(5.0) - (h4 - euler)).abs() < 1e-12);
    }

    #[test]
    fn digamma_is_derivative_of_lgamma() {
        for &x in &[0.3f64, 1.7, 2.5, 4.0, 12.0, 150.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (lgamma(x + h) - lgamma(x - h)) / (2.0 * h);
            assert!((digamma(x) - fd).abs() < 1e-7 * (1.0 + fd.abs()), "x={x}");
        }
    }
}
