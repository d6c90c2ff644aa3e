#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// `K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt` by the trapezoidal rule, which
/// converges geometrically for this integrand.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    let h = 2e-3;
    // Largest exponent that still matters relative to the t = 0 term.
    let t_max = (1.0 + 60.0 / x).acosh() + 1.0;
    let n = (t_max / h).ceil() as usize;
    let f = |t: f64| (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
    let mut sum = 0.5 * f(0.0);
    for k in 1..=n {
        sum += f(k as f64 * h);
    }
    sum * h * (-x).exp()
}

/// Central differences with one Richardson step, `O(h⁴)`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let central = |j: usize, h: f64| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[j] += h;
        m[j] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    };
    DVector::from_fn(x.len(), |j, _| (4.0 * central(j, h / 2.0) - central(j, h)) / 3.0)
}

/// `‖a − b‖∞ / ‖b‖∞`.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

/// A random, reasonably conditioned SPD matrix.
pub fn spd_matrix<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
}

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn mahalanobis_sq(p: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    u.dot(&p.clone().lu().solve(u).unwrap())
}

pub fn laplace_log(p: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let nu = 1.0 - 0.5 * x.len() as f64;
    let theta = (2.0 * mahalanobis_sq(p, &(x - c))).sqrt();
    nu * theta.ln() + bessel_k(nu, theta).ln()
}

/// Which branch of the Huber score applies, and its log-density up to a
/// per-branch constant.
pub fn huber_log(p: &DMatrix<f64>, c: &DVector<f64>, d1: f64, d2: f64, x: &DVector<f64>) -> (bool, f64) {
    let nu = 1.0 - 0.5 * x.len() as f64;
    let theta = (2.0 * mahalanobis_sq(p, &(x - c))).sqrt();
    let f = 2.0 / theta * bessel_k(nu - 1.0, theta) / bessel_k(nu, theta);
    if d1 * f <= d2 {
        (true, d1 * laplace_log(p, c, x))
    } else {
        (false, -d2 * theta * theta / 4.0)
    }
}

pub fn random_point<R: Rng>(rng: &mut R, center: &DVector<f64>, scale: f64) -> DVector<f64> {
    center + DVector::from_fn(center.len(), |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}
