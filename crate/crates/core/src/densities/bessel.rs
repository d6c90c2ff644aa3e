//! Ratios of modified Bessel functions of the second kind.
//!
//! Only `K_{ν−1}(x) / K_ν(x)` is ever needed. It is evaluated without forming
//! `K` itself: a Temme series (small `x`) or Steed's continued fraction
//! (large `x`) gives `K_{μ+1}/K_μ` for `|μ| ≤ 1/2`, and the ratio is carried up
//! to the target order with the stable recurrence
//! `r_μ = 1 / r_{μ−1} + 2μ / x`.

use std::f64::consts::PI;

use crate::{Result, VfpError};

/// Below this argument the ratio is treated as singular.
pub const MIN_ARGUMENT: f64 = 1e-12;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;

const GAM1: [f64; 7] = [
    -1.142022680371168e0,
    6.5165112670737e-3,
    3.087090173086e-4,
    -3.4706269649e-6,
    6.9437664e-9,
    3.67795e-11,
    -1.356e-13,
];
const GAM2: [f64; 8] = [
    1.843740587300905e0,
    -7.68528408447867e-2,
    1.2719271366546e-3,
    -4.9717367042e-6,
    -3.31261198e-8,
    2.423096e-10,
    -1.702e-13,
    -1.49e-15,
];

/// `K_{ν−1}(x) / K_ν(x)` for real order `ν` and `x ≥ 1e-12`.
pub fn bessel_k_ratio(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() || !x.is_finite() {
        return Err(VfpError::NonFinite("bessel_k_ratio argument"));
    }
    if x < MIN_ARGUMENT {
        return Err(VfpError::Singular { what: "bessel_k_ratio argument", value: x });
    }
    // K is even in its order, so both orders can be made ≥ −1/2.
    if nu >= 0.5 {
        Ok(1.0 / upper_ratio(nu - 1.0, x))
    } else {
        Ok(upper_ratio(-nu, x))
    }
}

/// `K_{m+1}(x) / K_m(x)` for `m ≥ −1/2`.
fn upper_ratio(m: f64, x: f64) -> f64 {
    let steps = (m + 0.5).floor().max(0.0);
    let mu = m - steps;
    let mut r = base_ratio(mu, x);
    for k in 1..=steps as usize {
        r = 1.0 / r + 2.0 * (mu + k as f64) / x;
    }
    r
}

/// `K_{μ+1}(x) / K_μ(x)` for `|μ| ≤ 1/2`.
fn base_ratio(mu: f64, x: f64) -> f64 {
    if x < SERIES_LIMIT {
        temme_ratio(mu, x)
    } else {
        steed_ratio(mu, x)
    }
}

fn temme_ratio(mu: f64, x: f64) -> f64 {
    let mu2 = mu * mu;
    let half = 0.5 * x;
    let pimu = PI * mu;
    let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
    let d = -half.ln();
    let e = mu * d;
    let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
    let (gam1, gam2, gampl, gammi) = gamma_terms(mu);
    let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
    let mut sum = ff;
    let e = e.exp();
    let mut p = 0.5 * e / gampl;
    let mut q = 0.5 / (e * gammi);
    let mut c = 1.0;
    let d = half * half;
    let mut sum1 = p;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        ff = (fi * ff + p + q) / (fi * fi - mu2);
        c *= d / fi;
        p /= fi - mu;
        q /= fi + mu;
        let del = c * ff;
        sum += del;
        sum1 += c * (p - fi * ff);
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum1 * (2.0 / x) / sum
}

fn steed_ratio(mu: f64, x: f64) -> f64 {
    let a1 = 0.25 - mu * mu;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut a = -a1;
    for i in 2..MAX_ITER {
        a -= 2.0 * (i - 1) as f64;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        if (delh / h).abs() < EPS {
            break;
        }
    }
    (mu + x + 0.5 - a1 * h) / x
}

/// `1/Γ(1−μ)` and `1/Γ(1+μ)` combinations used by the Temme series.
fn gamma_terms(mu: f64) -> (f64, f64, f64, f64) {
    let xx = 8.0 * mu * mu - 1.0;
    let gam1 = chebyshev(&GAM1, xx);
    let gam2 = chebyshev(&GAM2, xx);
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

fn chebyshev(c: &[f64], y: f64) -> f64 {
    let y2 = 2.0 * y;
    let (mut d, mut dd) = (0.0, 0.0);
    for &cj in c[1..].iter().rev() {
        let sv = d;
        d = y2 * d - dd + cj;
        dd = sv;
    }
    y * d - dd + 0.5 * c[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    // log K_ν(x) by trapezoidal quadrature of ∫ exp(−x cosh t) cosh(νt) dt.
    fn log_k(nu: f64, x: f64) -> f64 {
        let h = 1e-3;
        let log_term = |t: f64| -x * (t.cosh() - 1.0) + (nu * t).cosh().ln();
        let peak = (0..20_000).map(|k| log_term(k as f64 * h)).fold(f64::MIN, f64::max);
        let mut s = 0.5 * (log_term(0.0) - peak).exp();
        for k in 1..20_000 {
            s += (log_term(k as f64 * h) - peak).exp();
        }
        (s * h).ln() + peak - x
    }

    #[test]
    fn half_order_is_one() {
        for x in [1e-6, 0.3, 1.9, 2.0, 7.5, 300.0] {
            assert!((bessel_k_ratio(0.5, x).unwrap() - 1.0).abs() < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn matches_quadrature() {
        for &nu in &[-19.0, -1.5, -0.5, 0.0, 0.3, 0.8, 1.0, 2.7, 6.0] {
            for &x in &[0.05, 0.6, 1.99, 2.01, 4.0, 10.0, 35.0] {
                let oracle = (log_k(nu - 1.0, x) - log_k(nu, x)).exp();
                let got = bessel_k_ratio(nu, x).unwrap();
                assert!(((got - oracle) / oracle).abs() < 1e-10, "ν={nu} x={x}: {got} vs {oracle}");
            }
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn matches_high_precision_values() {
        // Reference values computed with 40-digit arithmetic.
        let cases = [
            (-19.0, 10.0, 4.058309441128230903),
            (-19.0, 0.5, 76.01388605333656649),
            (-19.0, 1.7, 22.40005245752965065),
            (0.3, 0.01, 3.836499955591233046),
            (-1.5, 3.0, 1.75),
            (-19.0, 1e-3, 38000.00002777777696),
            (-1.5, 1e4, 1.000200009999000100),
        ];
        for (nu, x, want) in cases {
            let got = bessel_k_ratio(nu, x).unwrap();
            assert!(((got - want) / want).abs() < 1e-12, "ν={nu} x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn large_argument_tends_to_one() {
        for nu in [-19.0, -1.0, 0.0, 3.0] {
            assert!((bessel_k_ratio(nu, 1e4).unwrap() - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn tiny_argument_is_singular() {
        assert!(matches!(bessel_k_ratio(-19.0, 1e-13), Err(VfpError::Singular { .. })));
        assert!(bessel_k_ratio(-19.0, f64::NAN).is_err());
    }
}
