//! Particle ensembles stored column-major: column `e` is particle `x^[e]`.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::{Result, StateVector, VfpError};

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    states: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(states: DMatrix<f64>) -> Result<Self> {
        if states.ncols() == 0 || states.nrows() == 0 {
            return Err(VfpError::TooFewMembers { needed: 1, got: states.ncols() });
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(VfpError::NonFinite("ensemble"));
        }
        Ok(Self { states })
    }

    pub fn from_members(members: &[StateVector]) -> Result<Self> {
        if members.is_empty() {
            return Err(VfpError::TooFewMembers { needed: 1, got: 0 });
        }
        let n = members[0].len();
        if let Some(bad) = members.iter().find(|m| m.len() != n) {
            return Err(VfpError::DimensionMismatch { expected: n, got: bad.len() });
        }
        Self::new(DMatrix::from_columns(members))
    }

    pub fn n_state(&self) -> usize {
        self.states.nrows()
    }

    pub fn n_ens(&self) -> usize {
        self.states.ncols()
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn into_states(self) -> DMatrix<f64> {
        self.states
    }

    pub fn member(&self, e: usize) -> DVectorView<'_, f64> {
        self.states.column(e)
    }

    pub fn members(&self) -> impl Iterator<Item = StateVector> + '_ {
        self.states.column_iter().map(|c| c.into_owned())
    }

    pub fn mean(&self) -> StateVector {
        let mut m = DVector::zeros(self.n_state());
        for c in self.states.column_iter() {
            m += c;
        }
        m / self.n_ens() as f64
    }

    /// `(X − x̄ 1ᵀ) / √(N_ens − 1)`.
    pub fn anomalies(&self) -> Result<DMatrix<f64>> {
        self.require(2)?;
        let mean = self.mean();
        let scale = 1.0 / ((self.n_ens() - 1) as f64).sqrt();
        let mut a = self.states.clone();
        for mut c in a.column_iter_mut() {
            c -= &mean;
            c *= scale;
        }
        Ok(a)
    }

    /// Empirical covariance `A Aᵀ`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let a = self.anomalies()?;
        Ok(&a * a.transpose())
    }

    /// Sub-ensemble restricted to the given state indices, in that order.
    pub fn rows(&self, indices: &[usize]) -> Ensemble {
        let states = DMatrix::from_fn(indices.len(), self.n_ens(), |r, c| self.states[(indices[r], c)]);
        Ensemble { states }
    }

    fn require(&self, needed: usize) -> Result<()> {
        if self.n_ens() < needed {
            return Err(VfpError::TooFewMembers { needed, got: self.n_ens() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_members() {
        let c = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let e = Ensemble::from_members(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert_eq!(e.mean(), c);
        assert_eq!(e.anomalies().unwrap(), DMatrix::zeros(3, 3));
        assert_eq!(e.covariance().unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn two_scalar_particles() {
        let e = Ensemble::new(DMatrix::from_row_slice(1, 2, &[0.0, 2.0])).unwrap();
        assert_eq!(e.mean()[0], 1.0);
        let a = e.anomalies().unwrap();
        assert_eq!((a[(0, 0)], a[(0, 1)]), (-1.0, 1.0));
        assert_eq!(e.covariance().unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn single_member_rejects_anomalies() {
        let e = Ensemble::new(DMatrix::from_element(2, 1, 1.0)).unwrap();
        assert_eq!(e.anomalies().unwrap_err(), VfpError::TooFewMembers { needed: 2, got: 1 });
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Ensemble::new(DMatrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn mean_matches_double_loop() {
        let x = DMatrix::from_fn(5, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin() * 3.0);
        let e = Ensemble::new(x.clone()).unwrap();
        let m = e.mean();
        for i in 0..5 {
            let mut s = 0.0;
            for j in 0..7 {
                s += x[(i, j)];
            }
            assert!((m[i] - s / 7.0).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn covariance_properties(vals in proptest::collection::vec(-10.0f64..10.0, 12), shift in 0usize..4) {
            let x = DMatrix::from_vec(3, 4, vals);
            let e = Ensemble::new(x.clone()).unwrap();
            let a = e.anomalies().unwrap();
            for r in a.row_iter() {
                prop_assert!(r.sum().abs() < 1e-10);
            }
            let p = e.covariance().unwrap();
            prop_assert_eq!(&p, &(&a * a.transpose()));
            let eig = nalgebra::SymmetricEigen::new(p.clone());
            prop_assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12 * (1.0 + p.norm())));

            // Particle exchangeability.
            let perm: Vec<usize> = (0..4).map(|k| (k + shift) % 4).collect();
            let xp = DMatrix::from_fn(3, 4, |i, j| x[(i, perm[j])]);
            let ep = Ensemble::new(xp).unwrap();
            prop_assert!((ep.mean() - e.mean()).amax() < 1e-12);
            prop_assert!((ep.covariance().unwrap() - p).amax() < 1e-10);
        }
    }
}
