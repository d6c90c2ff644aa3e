//! Rao-Blackwell Ledoit-Wolf shrinkage towards a scaled identity.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::ensemble::Ensemble;
use crate::{Result, VfpError};

/// `P_RBLW = (1 − γ) A Aᵀ + γ μ I`, kept in factored form.
#[derive(Debug, Clone)]
pub struct RblwShrinkage {
    gamma: f64,
    mu: f64,
    anomalies: DMatrix<f64>,
    // Cholesky of I + c AᵀA with c = (1 − γ) / (γ μ).
    inner: Cholesky<f64, Dyn>,
}

pub fn rblw_shrinkage(ens: &Ensemble) -> Result<RblwShrinkage> {
    if ens.n_ens() < 3 {
        return Err(VfpError::TooFewMembers { needed: 3, got: ens.n_ens() });
    }
    let a = ens.anomalies()?;
    let gram = a.transpose() * &a;
    let n = ens.n_ens() as f64;
    let p = ens.n_state() as f64;
    let tr = gram.trace();
    let tr_sq = gram.norm_squared();
    let gamma = shrinkage_intensity(n, p, tr, tr_sq);
    let mu = tr / p;
    if !(mu > 0.0) {
        return Err(VfpError::Singular { what: "shrinkage target scale", value: mu });
    }
    let c = (1.0 - gamma) / (gamma * mu);
    let mut m = gram * c;
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    let inner = Cholesky::new(m).ok_or(VfpError::NotPositiveDefinite)?;
    Ok(RblwShrinkage { gamma, mu, anomalies: a, inner })
}

/// γ from the sample size `n`, dimension `p`, `tr P` and `tr P²`.
pub fn shrinkage_intensity(n: f64, p: f64, tr: f64, tr_sq: f64) -> f64 {
    let num = (n - 2.0) / n * tr_sq + tr * tr;
    let den = (n + 2.0) * (tr_sq - tr * tr / p);
    if den <= f64::EPSILON * tr_sq {
        return 1.0;
    }
    (num / den).clamp(0.0, 1.0)
}

impl RblwShrinkage {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn dim(&self) -> usize {
        self.anomalies.nrows()
    }

    /// `P_RBLW⁻¹ v` by Sherman-Morrison-Woodbury.
    pub fn apply_inverse(&self, v: &DVector<f64>) -> DVector<f64> {
        let s = self.gamma * self.mu;
        let c = (1.0 - self.gamma) / s;
        let w = self.inner.solve(&self.anomalies.tr_mul(v));
        (v - &self.anomalies * w * c) / s
    }

    /// `P_RBLW v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let av = &self.anomalies * self.anomalies.tr_mul(v);
        av * (1.0 - self.gamma) + v * (self.gamma * self.mu)
    }

    /// Dense `P_RBLW`, for diagnostics and small problems.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut p = &self.anomalies * self.anomalies.transpose() * (1.0 - self.gamma);
        for i in 0..n {
            p[(i, i)] += self.gamma * self.mu;
        }
        p
    }

    /// Dense `P_RBLW⁻¹`, built column by column through the SMW form.
    pub fn precision(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            out.set_column(j, &self.apply_inverse(&e));
        }
        crate::linalg::symmetrize(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vector, stream};

    fn random_ensemble(n: usize, m: usize, seed: u64) -> Ensemble {
        let mut rng = stream(seed, &[]);
        let cols: Vec<_> = (0..m).map(|_| standard_normal_vector(&mut rng, n)).collect();
        Ensemble::from_members(&cols).unwrap()
    }

    #[test]
    fn intensity_clamps_to_one() {
        // Nearly isotropic and tiny sample: the raw formula exceeds 1.
        let raw = |n: f64, p: f64, tr: f64, tr_sq: f64| {
            ((n - 2.0) / n * tr_sq + tr * tr) / ((n + 2.0) * (tr_sq - tr * tr / p))
        };
        assert!(raw(4.0, 3.0, 3.0, 3.5) > 1.0);
        assert_eq!(shrinkage_intensity(4.0, 3.0, 3.0, 3.5), 1.0);
        // Exactly isotropic: zero denominator.
        assert_eq!(shrinkage_intensity(10.0, 4.0, 4.0, 4.0), 1.0);
    }

    #[test]
    fn smw_inverse_matches_dense() {
        for seed in 0..20 {
            let ens = random_ensemble(8, 3 + seed as usize % 9, seed);
            let s = rblw_shrinkage(&ens).unwrap();
            assert!((0.0..=1.0).contains(&s.gamma()));
            let p = ens.covariance().unwrap();
            let mut target = p * (1.0 - s.gamma());
            for i in 0..8 {
                target[(i, i)] += s.gamma() * s.mu();
            }
            let dense = target.clone().try_inverse().unwrap();
            let mut rng = stream(seed, &[1]);
            let v = standard_normal_vector(&mut rng, 8);
            let got = s.apply_inverse(&v);
            let want = &dense * &v;
            assert!((&got - &want).amax() < 1e-8 * (1.0 + want.amax()), "seed {seed}");
            assert!((s.covariance() - target).amax() < 1e-12);
            assert!((&s.apply(&got) - &v).amax() < 1e-9);
        }
    }

    #[test]
    fn too_few_members() {
        let ens = random_ensemble(4, 2, 3);
        assert!(matches!(rblw_shrinkage(&ens), Err(VfpError::TooFewMembers { needed: 3, got: 2 })));
    }
}
