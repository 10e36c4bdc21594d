//! Special functions for the prior fit and the Student p-values.
//!
//! The polygamma functions shift the argument up with the recurrence until
//! it is large enough for the asymptotic series. The incomplete beta uses
//! the modified Lentz continued fraction.

use crate::error::{Error, Result};

/// Below this the recurrence is applied before the asymptotic series.
const ASYMPTOTIC_FROM: f64 = 10.0;

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} needs a positive finite argument, got {x}")))
    }
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r * (1.0 / 132.0 - r * (691.0 / 32760.0))))));
    acc + x.ln() - 0.5 / x - series
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = 1.0 / 6.0
        - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * (691.0 / 2730.0 - r * (7.0 / 6.0))))));
    acc + 1.0 / x + 0.5 * r + series * r / x
}

pub(crate) fn tetragamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = 1.0 / 6.0 - r * (1.0 / 6.0 - r * (3.0 / 10.0 - r * (5.0 / 6.0 - r * (691.0 / 210.0))));
    acc - r - r / x - 0.5 * r * r + series * r * r * r
}

pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub fn trigamma(x: f64) -> Result<f64> {
    check_positive("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub fn tetragamma(x: f64) -> Result<f64> {
    check_positive("tetragamma", x)?;
    Ok(tetragamma_unchecked(x))
}

/// Solve trigamma(x) = y for x > 0 by Newton's method on 1/trigamma.
pub fn trigamma_inverse(y: f64) -> Result<f64> {
    check_positive("trigamma_inverse", y)?;
    if y > 1e7 {
        return Ok(1.0 / y.sqrt());
    }
    if y < 1e-6 {
        return Ok(1.0 / y);
    }
    let mut x = 0.5 + 1.0 / y;
    for _ in 0..50 {
        let tri = trigamma_unchecked(x);
        let step = tri * (1.0 - tri / y) / tetragamma_unchecked(x);
        x += step;
        if (step / x).abs() < 1e-8 {
            return Ok(x);
        }
    }
    Err(Error::Domain(format!("trigamma_inverse({y}) did not converge in 50 iterations")))
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

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - log_gamma_unchecked(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=100_000 {
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

/// Regularized incomplete beta I_x(a, b). `one_minus_x` is passed
/// separately so callers can keep precision when x is close to 1.
fn inc_beta_split(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if one_minus_x <= 0.0 {
        return 1.0;
    }
    let ln_front = log_gamma_unchecked(a + b) - log_gamma_unchecked(a) - log_gamma_unchecked(b)
        + a * x.ln()
        + b * one_minus_x.ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, one_minus_x) / b
    }
}

pub fn inc_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    check_positive("inc_beta (a)", a)?;
    check_positive("inc_beta (b)", b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("inc_beta needs x in [0, 1], got {x}")));
    }
    Ok(inc_beta_split(a, b, x, 1.0 - x))
}

/// Two-sided tail probability P(|T| ≥ |t|) for Student's t with `df`
/// degrees of freedom, computed without cancellation.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    check_positive("t_two_sided_p (df)", df)?;
    if t.is_nan() {
        return Err(Error::Domain("t_two_sided_p of NaN".into()));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let one_minus_x = t2 / (df + t2);
    Ok(inc_beta_split(0.5 * df, 0.5, x, one_minus_x).clamp(0.0, 1.0))
}

/// P(T ≤ t) for Student's t.
pub fn student_cdf(t: f64, df: f64) -> Result<f64> {
    let tail = 0.5 * t_two_sided_p(t, df)?;
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}
