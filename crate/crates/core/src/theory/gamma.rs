//! Regularized incomplete gamma functions.
//!
//! `P(a, x)` by its power series when `x < a + 1`, `Q(a, x)` by the modified
//! Lentz continued fraction otherwise. The common prefactor
//! `x^a e^{-x} / Gamma(a)` is formed in log space.

use statrs::function::gamma::ln_gamma;

use super::TheoryError;

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

fn check(a: f64, x: f64) -> Result<(), TheoryError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(TheoryError::Domain(format!("gamma shape must be positive, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(TheoryError::Domain(format!("gamma argument must be nonnegative, got {x}")));
    }
    Ok(())
}

fn log_prefactor(a: f64, x: f64) -> f64 {
    -x + a * x.ln() - ln_gamma(a)
}

fn series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (log_prefactor(a, x) + sum.ln()).exp()
}

fn continued_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
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
    (log_prefactor(a, x) + h.ln()).exp()
}

/// Lower regularized incomplete gamma function `P(a, x)`.
pub fn regularized_gamma_lower(a: f64, x: f64) -> Result<f64, TheoryError> {
    check(a, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(if x < a + 1.0 { series(a, x) } else { 1.0 - continued_fraction(a, x) })
}

/// Upper regularized incomplete gamma function `Q(a, x)`.
pub fn regularized_gamma_upper(a: f64, x: f64) -> Result<f64, TheoryError> {
    check(a, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(if x < a + 1.0 { 1.0 - series(a, x) } else { continued_fraction(a, x) })
}
