//! Correspondence between a spread `s` and the fraction `p` of normally
//! distributed targets that land in `[−1, 1]`: `p = erf(1/(√2 s))`.

use crate::error::{Error, Result};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Error function.
///
/// Uses the positive-term series `e^{−x²} Σ 2ⁿx^{2n+1}/(2n+1)!!` below
/// `|x| = 3` and the Laplace continued fraction for `erfc` above it. Absolute
/// error is below `1e-14` on the real line.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let a = x.abs();
    let v = if a < 3.0 {
        erf_series(a)
    } else {
        1.0 - erfc_continued_fraction(a)
    };
    v.copysign(x)
}

pub fn erfc(x: f64) -> f64 {
    if x >= 3.0 {
        erfc_continued_fraction(x)
    } else {
        1.0 - erf(x)
    }
}

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > sum * 1e-17 {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

fn erfc_continued_fraction(x: f64) -> f64 {
    if x > 27.0 {
        return 0.0;
    }
    let mut f = x;
    for k in (1..=120).rev() {
        f = x + (k as f64 / 2.0) / f;
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// Inverse of [`erf`] on `(−1, 1)`, by bisection.
pub fn erf_inv(p: f64) -> Result<f64> {
    if !(p > -1.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "erf_inv argument {p} not in (-1, 1)"
        )));
    }
    if p < 0.0 {
        return erf_inv(-p).map(|v| -v);
    }
    let (mut lo, mut hi) = (0.0f64, 6.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if erf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fraction of normal targets inside `[−1, 1]` when normalized to standard
/// deviation `s`.
pub fn coverage_from_spread(s: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!("spread {s} must be positive")));
    }
    Ok(erf(1.0 / (std::f64::consts::SQRT_2 * s)))
}

/// Spread `s` whose normalization places a fraction `p` of normal targets in
/// `[−1, 1]`.
pub fn spread_from_coverage(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("coverage {p} not in (0, 1)")));
    }
    Ok(1.0 / (std::f64::consts::SQRT_2 * erf_inv(p)?))
}
