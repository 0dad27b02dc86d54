//! Standard-normal helpers that stay finite deep in the tails.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `ln N(x; mean, var)`.
#[inline]
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // reflection; overflows to +inf for very negative x, which is the true limit
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 10.0 {
        return (x * x).exp() * erfc(x);
    }
    // asymptotic series, truncated well before its terms start growing
    let inv2x2 = 1.0 / (2.0 * x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..20 {
        term *= -((2 * k - 1) as f64) * inv2x2;
        sum += term;
    }
    sum / (x * PI.sqrt())
}

/// Complementary normal cdf `Φc(x) = P(Z > x)`.
pub fn phi_c(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// `ln Φc(x)` without underflow for large positive `x`.
pub fn log_phi_c(x: f64) -> f64 {
    if x > 0.0 {
        (0.5 * erfcx(x * FRAC_1_SQRT_2)).ln() - 0.5 * x * x
    } else {
        (-phi_c(-x)).ln_1p()
    }
}

/// Hazard ratio `φ(x) / Φc(x)` (inverse Mills ratio).
pub fn hazard(x: f64) -> f64 {
    if x > 0.0 {
        SQRT_2_OVER_PI / erfcx(x * FRAC_1_SQRT_2)
    } else {
        std_normal_pdf(x) / phi_c(x)
    }
}

/// Numerically stable `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of a probability.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
