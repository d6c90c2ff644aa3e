//! Gradient-log-densities against central differences of independently
//! written log-densities.

mod common;

use common::{fd_gradient, huber_log, laplace_log, mahalanobis_sq, random_point, rel_err, spd_matrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use vfp_core::densities::{DensityModel, ObsError, ObsTransform, ObservationModel, ObservationOperator};
use vfp_core::rng::stream;

const POINTS: usize = 50;
const TOL: f64 = 1e-6;

#[test]
fn gaussian_family() {
    let mut rng = stream(11, &[]);
    for d in [1, 3, 6] {
        let p = spd_matrix(&mut rng, d);
        let c = random_point(&mut rng, &DVector::zeros(d), 1.0);
        let m = DensityModel::gaussian(c.clone(), p.clone()).unwrap();
        for _ in 0..POINTS {
            let x = random_point(&mut rng, &c, 2.0);
            let fd = fd_gradient(|z| -0.5 * mahalanobis_sq(&p, &(z - &c)), &x, 1e-3);
            assert!(rel_err(&m.grad_log_density(&x), &fd) < TOL, "d = {d}");
        }
    }
}

#[test]
fn laplace_family() {
    let mut rng = stream(12, &[]);
    for d in [2, 3, 5] {
        let p = spd_matrix(&mut rng, d);
        let c = random_point(&mut rng, &DVector::zeros(d), 1.0);
        let m = DensityModel::laplace(c.clone(), p.clone()).unwrap();
        for _ in 0..POINTS {
            let x = random_point(&mut rng, &c, 1.5);
            let score = m.score(&x);
            assert!(!score.singular);
            let theta = (2.0 * mahalanobis_sq(&p, &(&x - &c))).sqrt();
            let fd = fd_gradient(|z| laplace_log(&p, &c, z), &x, 1e-3 * theta.min(1.0));
            let err = rel_err(&score.grad, &fd);
            assert!(err < TOL, "d = {d}, theta = {theta}, err = {err}");
        }
    }
}

#[test]
fn laplace_centre_is_flagged() {
    let m = DensityModel::laplace(DVector::from_element(3, 1.0), DMatrix::identity(3, 3)).unwrap();
    let s = m.score(&DVector::from_element(3, 1.0 + 1e-9));
    assert!(s.singular);
    assert_eq!(s.grad, DVector::zeros(3));
}

#[test]
fn huber_family_both_branches() {
    let mut rng = stream(13, &[]);
    let (d1, d2) = (1.0, 1.5);
    let mut seen = [0usize; 2];
    for d in [2, 3, 4] {
        let p = spd_matrix(&mut rng, d);
        let c = random_point(&mut rng, &DVector::zeros(d), 1.0);
        let m = DensityModel::huber(c.clone(), p.clone(), d1, d2).unwrap();
        let mut checked = 0;
        while checked < POINTS {
            let x = random_point(&mut rng, &c, 1.5);
            let theta = (2.0 * mahalanobis_sq(&p, &(&x - &c))).sqrt();
            let h = 1e-3 * theta.min(1.0);
            let branch = huber_log(&p, &c, d1, d2, &x).0;
            // Stencils that straddle the branch boundary see two constants.
            let straddles = (0..d).any(|j| {
                [-2.0, 2.0].iter().any(|s| {
                    let mut z = x.clone();
                    z[j] += s * h;
                    huber_log(&p, &c, d1, d2, &z).0 != branch
                })
            });
            if straddles {
                continue;
            }
            let fd = fd_gradient(|z| huber_log(&p, &c, d1, d2, z).1, &x, h);
            let err = rel_err(&m.grad_log_density(&x), &fd);
            assert!(err < TOL, "d = {d}, theta = {theta}, err = {err}");
            seen[branch as usize] += 1;
            checked += 1;
        }
    }
    assert!(seen[0] > 10 && seen[1] > 10, "branches visited: {seen:?}");
}

#[test]
fn huber_score_is_continuous_across_branches() {
    let p = DMatrix::identity(3, 3);
    let m = DensityModel::huber(DVector::zeros(3), p, 1.0, 1.5).unwrap();
    let dir = DVector::from_vec(vec![1.0, 2.0, -0.5]).normalize();
    let mut prev = m.grad_log_density(&(&dir * 1e-4));
    let mut max_jump: f64 = 0.0;
    for k in 2..=40_000 {
        let g = m.grad_log_density(&(&dir * (k as f64 * 1e-4)));
        max_jump = max_jump.max((&g - &prev).norm());
        prev = g;
    }
    // Smooth pieces move by at most δ2·1e-4 per step.
    assert!(max_jump < 2e-4, "largest jump {max_jump}");
}

#[test]
fn cauchy_family() {
    let mut rng = stream(14, &[]);
    for d in [1, 4] {
        let c = random_point(&mut rng, &DVector::zeros(d), 1.0);
        let g = DVector::from_fn(d, |_, _| rng.random_range(0.3..2.0));
        let m = DensityModel::cauchy(c.clone(), g.clone()).unwrap();
        let log = |z: &DVector<f64>| -> f64 { (0..d).map(|i| -(g[i] * g[i] + (z[i] - c[i]).powi(2)).ln()).sum() };
        for _ in 0..POINTS {
            let x = random_point(&mut rng, &c, 3.0);
            let fd = fd_gradient(log, &x, 1e-3);
            assert!(rel_err(&m.grad_log_density(&x), &fd) < TOL);
        }
    }
}

#[test]
fn kernel_family() {
    let mut rng = stream(15, &[]);
    let (d, n) = (3, 25);
    let anchors = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let h = DVector::from_fn(d, |_, _| rng.random_range(0.3..1.0));
    let m = DensityModel::kernel(anchors.clone(), h.clone()).unwrap();
    let log = |z: &DVector<f64>| -> f64 {
        anchors
            .column_iter()
            .map(|a| (-0.5 * (0..d).map(|i| ((z[i] - a[i]) / h[i]).powi(2)).sum::<f64>()).exp())
            .sum::<f64>()
            .ln()
    };
    for _ in 0..POINTS {
        let x = random_point(&mut rng, &DVector::zeros(d), 1.5);
        let fd = fd_gradient(log, &x, 1e-3);
        assert!(rel_err(&m.grad_log_density(&x), &fd) < TOL);
    }
}

fn operator(n: usize, transform: ObsTransform) -> ObservationOperator {
    ObservationOperator::new(n, vec![0, 2, 3], transform).unwrap()
}

fn apply(x: &DVector<f64>, transform: ObsTransform) -> DVector<f64> {
    let f = |v: f64| if transform == ObsTransform::Square { v * v } else { v };
    DVector::from_vec(vec![f(x[0]), f(x[2]), f(x[3])])
}

#[test]
fn gaussian_likelihood() {
    let mut rng = stream(16, &[]);
    for transform in [ObsTransform::Identity, ObsTransform::Square] {
        let r = spd_matrix(&mut rng, 3);
        let y = random_point(&mut rng, &DVector::zeros(3), 1.0);
        let obs =
            ObservationModel::new(operator(5, transform), ObsError::gaussian(r.clone()).unwrap(), y.clone()).unwrap();
        for _ in 0..POINTS {
            let x = random_point(&mut rng, &DVector::zeros(5), 1.5);
            let fd = fd_gradient(|z| -0.5 * mahalanobis_sq(&r, &(&y - apply(z, transform))), &x, 1e-3);
            assert!(rel_err(&obs.grad_log_likelihood(&x), &fd) < TOL);
        }
    }
}

#[test]
fn cauchy_likelihood() {
    let mut rng = stream(17, &[]);
    for transform in [ObsTransform::Identity, ObsTransform::Square] {
        let g = DVector::from_vec(vec![1.0, 0.5, 2.0]);
        let y = random_point(&mut rng, &DVector::zeros(3), 2.0);
        let obs =
            ObservationModel::new(operator(5, transform), ObsError::cauchy(g.clone()).unwrap(), y.clone()).unwrap();
        let log = |z: &DVector<f64>| -> f64 {
            let r = &y - apply(z, transform);
            (0..3).map(|k| -(g[k] * g[k] + r[k] * r[k]).ln()).sum()
        };
        for _ in 0..POINTS {
            let x = random_point(&mut rng, &DVector::zeros(5), 1.5);
            assert!(rel_err(&obs.grad_log_likelihood(&x), &fd_gradient(log, &x, 1e-3)) < TOL);
        }
    }
}
