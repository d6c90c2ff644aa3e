//! Distance-based localization on one-dimensional grids.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::linalg::SpdFactor;
use crate::Result;

/// Spatial layout of the state indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Periodic grid of `n` points.
    Ring { n: usize },
    /// Open grid of `n` points.
    Line { n: usize },
}

impl Geometry {
    pub fn len(&self) -> usize {
        match *self {
            Self::Ring { n } | Self::Line { n } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let d = i.abs_diff(j);
        match *self {
            Self::Ring { n } => d.min(n - d) as f64,
            Self::Line { .. } => d as f64,
        }
    }
}

/// Fifth-order piecewise-rational Gaspari-Cohn correlation with half-width
/// `c`; zero beyond `2c`.
pub fn gaspari_cohn(d: f64, c: f64) -> f64 {
    let z = d.abs() / c;
    if z <= 1.0 {
        (((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z + 1.0
    } else if z < 2.0 {
        ((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0 - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

/// Gaspari-Cohn half-width for a localization radius `r`. The factor
/// `√(10/3)` matches the taper's curvature at the origin to a Gaussian of
/// length scale `r`.
pub fn half_width(radius: f64) -> f64 {
    radius * (10.0f64 / 3.0).sqrt()
}

/// `{ j : gaspari_cohn(d(i, j), c(r)) > 0 }` in increasing index order.
pub fn local_influence_set(i: usize, radius: f64, geometry: &Geometry) -> Vec<usize> {
    let c = half_width(radius);
    (0..geometry.len()).filter(|&j| j == i || gaspari_cohn(geometry.distance(i, j), c) > 0.0).collect()
}

/// `C_{jk} = gaspari_cohn(d(s_j, s_k), c(r))` for the listed states.
pub fn taper_matrix(states: &[usize], radius: f64, geometry: &Geometry) -> DMatrix<f64> {
    let c = half_width(radius);
    DMatrix::from_fn(states.len(), states.len(), |a, b| gaspari_cohn(geometry.distance(states[a], states[b]), c))
}

/// Full-state taper for Schur-product localization.
pub fn full_taper(radius: f64, geometry: &Geometry) -> DMatrix<f64> {
    let all: Vec<usize> = (0..geometry.len()).collect();
    taper_matrix(&all, radius, geometry)
}

/// Local covariance `(A_ℓ A_ℓᵀ) ∘ C_ℓ` of `ens` on the states `local`.
pub fn local_covariance(ens: &Ensemble, local: &[usize], taper: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(ens.rows(local).covariance()?.component_mul(taper))
}

/// Component `i` of `−P_loc⁻¹ (x_ℓ − x̄_ℓ)`, the localized Gaussian score of
/// the ensemble at state index `i`.
pub fn localized_grad_log_q(
    ens: &Ensemble,
    i: usize,
    x: &DVector<f64>,
    radius: f64,
    geometry: &Geometry,
) -> Result<f64> {
    let local = local_influence_set(i, radius, geometry);
    let taper = taper_matrix(&local, radius, geometry);
    let p = local_covariance(ens, &local, &taper)?;
    let factor = SpdFactor::new(&p, true)?;
    let mean = ens.mean();
    let u = DVector::from_iterator(local.len(), local.iter().map(|&j| x[j] - mean[j]));
    let pos = local.iter().position(|&j| j == i).expect("influence set contains its centre");
    Ok(-factor.solve(&u)[pos])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaspari_cohn_values() {
        assert_eq!(gaspari_cohn(0.0, 3.0), 1.0);
        assert_eq!(gaspari_cohn(6.0, 3.0), 0.0);
        assert_eq!(gaspari_cohn(7.5, 3.0), 0.0);
        assert!((gaspari_cohn(3.0, 3.0) - 5.0 / 24.0).abs() < 1e-15);
        // Continuity at the knots and monotone decay.
        assert!((gaspari_cohn(1.0 - 1e-12, 1.0) - gaspari_cohn(1.0 + 1e-12, 1.0)).abs() < 1e-10);
        assert!(gaspari_cohn(2.0 - 1e-9, 1.0).abs() < 1e-8);
        let mut prev = 1.0;
        for k in 1..200 {
            let g = gaspari_cohn(k as f64 * 0.01, 1.0);
            assert!(g <= prev && g >= 0.0);
            prev = g;
        }
    }

    #[test]
    fn ring_distances() {
        let g = Geometry::Ring { n: 40 };
        assert_eq!(g.distance(0, 39), 1.0);
        assert_eq!(g.distance(5, 25), 20.0);
        assert_eq!(Geometry::Line { n: 40 }.distance(0, 39), 39.0);
    }

    #[test]
    fn influence_set_sizes() {
        let g = Geometry::Ring { n: 40 };
        assert_eq!(local_influence_set(0, 2.0, &g).len(), 15);
        assert_eq!(local_influence_set(17, 4.0, &g).len(), 29);
        assert_eq!(local_influence_set(3, 1e-9, &g), vec![3]);
        let s = local_influence_set(0, 2.0, &g);
        assert!(s.contains(&7) && s.contains(&33) && !s.contains(&8) && !s.contains(&32));
    }
}
