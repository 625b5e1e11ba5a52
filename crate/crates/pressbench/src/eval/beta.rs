//! Beta-posterior credible intervals via the regularized incomplete beta
//! function (continued fraction) and bisection quantiles.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// ln Gamma by the Lanczos approximation (g = 7, 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b): the Beta(a, b) CDF at x.
pub fn beta_cdf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Quantile by bisection on the CDF.
pub fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    // 1e-8 CDF accuracy needs interval width well below that; 100 halvings
    // take the bracket to ~1e-30
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if beta_cdf(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Equal-tailed credible interval of the Beta(1+s, 1+f) posterior.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct CredibleInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Posterior shape parameters (1 + successes, 1 + failures).
    pub alpha: f64,
    pub beta: f64,
}

pub fn beta_credible_interval(
    successes: usize,
    trials: usize,
    level: f64,
) -> Result<CredibleInterval, EvalError> {
    if successes > trials {
        return Err(EvalError::Domain(format!(
            "successes {successes} exceed trials {trials}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(EvalError::Domain(format!("level {level} outside (0,1)")));
    }
    let a = 1.0 + successes as f64;
    let b = 1.0 + (trials - successes) as f64;
    let tail = (1.0 - level) / 2.0;
    Ok(CredibleInterval {
        lo: beta_quantile(a, b, tail),
        hi: beta_quantile(a, b, 1.0 - tail),
        level,
        alpha: a,
        beta: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        for n in 1..12u64 {
            let fact: f64 = (1..n).map(|k| k as f64).product();
            assert!(
                (ln_gamma(n as f64) - fact.ln()).abs() < 1e-10,
                "Gamma({n})"
            );
        }
        // half-integer: Gamma(1/2) = sqrt(pi)
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_posterior_has_the_textbook_interval() {
        let ci = beta_credible_interval(0, 0, 0.95).unwrap();
        assert!((ci.lo - 0.025).abs() < 1e-9, "{}", ci.lo);
        assert!((ci.hi - 0.975).abs() < 1e-9, "{}", ci.hi);
    }

    #[test]
    fn beta_2_1_matches_the_analytic_inverse() {
        // CDF of Beta(2,1) is x^2, so quantiles are square roots
        let ci = beta_credible_interval(1, 1, 0.95).unwrap();
        assert!((ci.lo - 0.025f64.sqrt()).abs() < 1e-5, "{}", ci.lo);
        assert!((ci.hi - 0.975f64.sqrt()).abs() < 1e-5, "{}", ci.hi);
        assert!((ci.lo - 0.15811).abs() < 1e-5);
        assert!((ci.hi - 0.98742).abs() < 1e-5);
    }

    #[test]
    fn interval_mass_equals_the_level() {
        for (s, n) in [(0, 10), (7, 11), (22, 40), (40, 40)] {
            let ci = beta_credible_interval(s, n, 0.95).unwrap();
            let mass = beta_cdf(ci.alpha, ci.beta, ci.hi) - beta_cdf(ci.alpha, ci.beta, ci.lo);
            assert!((mass - 0.95).abs() < 1e-6, "s={s} n={n}: mass {mass}");
            assert!(ci.lo < ci.hi);
        }
    }

    #[test]
    fn intervals_narrow_as_evidence_grows() {
        let mut last_width = f64::INFINITY;
        for n in [10usize, 20, 40, 80, 160] {
            let ci = beta_credible_interval(n / 2, n, 0.95).unwrap();
            let width = ci.hi - ci.lo;
            assert!(width < last_width, "n={n}: {width} !< {last_width}");
            last_width = width;
        }
    }

    #[test]
    fn rejects_invalid_counts() {
        assert!(beta_credible_interval(5, 4, 0.95).is_err());
        assert!(beta_credible_interval(1, 4, 1.5).is_err());
    }

    #[test]
    fn cdf_is_monotone_and_bounded() {
        let (a, b) = (23.0, 19.0);
        let mut prev = 0.0;
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            let f = beta_cdf(a, b, x);
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev - 1e-12);
            prev = f;
        }
        assert_eq!(beta_cdf(a, b, 0.0), 0.0);
        assert_eq!(beta_cdf(a, b, 1.0), 1.0);
    }
}
