//! Parametrized density families and observation likelihoods.
//!
//! Only gradients (and approximate Hessians) of log-densities are provided;
//! normalizing constants are never needed by the flow.

mod bessel;
mod observation;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assimilate::{rblw_shrinkage, RblwShrinkage};
use crate::ensemble::Ensemble;
use crate::linalg::{symmetrize, SpdFactor};
use crate::{Result, StateVector, VfpError};

pub use bessel::{bessel_k_ratio, MIN_ARGUMENT};
pub use observation::{ObsError, ObsTransform, ObservationModel, ObservationOperator};

/// Inside this Mahalanobis radius Laplace and Huber gradients are set to zero.
pub const SINGULAR_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityFamily {
    Gaussian,
    Laplace,
    Huber {
        #[serde(default = "one")]
        delta1: f64,
        #[serde(default = "one")]
        delta2: f64,
    },
    Cauchy,
    Kernel,
}

fn one() -> f64 {
    1.0
}

impl DensityFamily {
    pub fn huber() -> Self {
        Self::Huber { delta1: 1.0, delta2: 1.0 }
    }

    /// Short letter used in method names such as `VFP(GH)`.
    pub fn letter(&self) -> char {
        match self {
            Self::Gaussian => 'G',
            Self::Laplace => 'L',
            Self::Huber { .. } => 'H',
            Self::Cauchy => 'C',
            Self::Kernel => 'K',
        }
    }

    pub fn uses_covariance(&self) -> bool {
        matches!(self, Self::Gaussian | Self::Laplace | Self::Huber { .. })
    }
}

/// How the empirical covariance is regularized before it is inverted.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum CovariancePolicy {
    /// Raw sample covariance; rank-deficient ensembles are rejected.
    #[default]
    Plain,
    /// Sample covariance plus `1e-8·tr(P)/n · I` at the inversion site.
    Jitter,
    /// RBLW shrinkage towards `tr(P)/n · I`.
    Shrinkage,
    /// Schur product with a taper matrix, plus jitter.
    Tapered(DMatrix<f64>),
}

/// A covariance together with the means to apply its inverse.
#[derive(Debug, Clone)]
pub enum Spread {
    Dense { covariance: DMatrix<f64>, factor: SpdFactor },
    Shrunk(RblwShrinkage),
}

impl Spread {
    pub fn dense(covariance: DMatrix<f64>, jitter: bool) -> Result<Self> {
        let factor = SpdFactor::new(&covariance, jitter)?;
        Ok(Self::Dense { covariance, factor })
    }

    pub fn from_ensemble(ens: &Ensemble, policy: &CovariancePolicy) -> Result<Self> {
        match policy {
            CovariancePolicy::Plain => {
                if ens.n_ens() <= ens.n_state() {
                    return Err(VfpError::RankDeficient { n_state: ens.n_state(), n_ens: ens.n_ens() });
                }
                Self::dense(ens.covariance()?, false)
            }
            CovariancePolicy::Jitter => Self::dense(ens.covariance()?, true),
            CovariancePolicy::Shrinkage => Ok(Self::Shrunk(rblw_shrinkage(ens)?)),
            CovariancePolicy::Tapered(taper) => {
                let p = ens.covariance()?;
                if taper.shape() != p.shape() {
                    return Err(VfpError::DimensionMismatch { expected: p.nrows(), got: taper.nrows() });
                }
                Self::dense(p.component_mul(taper), true)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense { covariance, .. } => covariance.nrows(),
            Self::Shrunk(s) => s.dim(),
        }
    }

    /// `P⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Dense { factor, .. } => factor.solve(v),
            Self::Shrunk(s) => s.apply_inverse(v),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            Self::Dense { covariance, .. } => covariance.clone(),
            Self::Shrunk(s) => s.covariance(),
        }
    }

    pub fn precision(&self) -> DMatrix<f64> {
        match self {
            Self::Dense { factor, .. } => symmetrize(&factor.inverse()),
            Self::Shrunk(s) => s.precision(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub covariance: CovariancePolicy,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { covariance: CovariancePolicy::Jitter }
    }
}

#[derive(Debug, Clone)]
pub enum DensityModel {
    Gaussian { center: StateVector, spread: Spread },
    Laplace { center: StateVector, spread: Spread },
    Huber { center: StateVector, spread: Spread, delta1: f64, delta2: f64 },
    Cauchy { center: StateVector, scales: DVector<f64> },
    Kernel { anchors: DMatrix<f64>, bandwidth: DVector<f64> },
}

/// A gradient evaluation, flagged when it fell inside the Laplace/Huber
/// singular neighbourhood of the centre.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub grad: StateVector,
    pub singular: bool,
}

pub fn fit(family: DensityFamily, ens: &Ensemble, options: &FitOptions) -> Result<DensityModel> {
    match family {
        DensityFamily::Gaussian | DensityFamily::Laplace | DensityFamily::Huber { .. } => {
            let center = ens.mean();
            let spread = Spread::from_ensemble(ens, &options.covariance)?;
            Ok(match family {
                DensityFamily::Gaussian => DensityModel::Gaussian { center, spread },
                DensityFamily::Laplace => DensityModel::Laplace { center, spread },
                DensityFamily::Huber { delta1, delta2 } => {
                    check_huber(delta1, delta2)?;
                    DensityModel::Huber { center, spread, delta1, delta2 }
                }
                _ => unreachable!(),
            })
        }
        DensityFamily::Cauchy => {
            if ens.n_ens() < 2 {
                return Err(VfpError::TooFewMembers { needed: 2, got: ens.n_ens() });
            }
            let mut center = DVector::zeros(ens.n_state());
            let mut scales = DVector::zeros(ens.n_state());
            for (i, row) in ens.states().row_iter().enumerate() {
                let mut v: Vec<f64> = row.iter().copied().collect();
                v.sort_by(f64::total_cmp);
                center[i] = quantile(&v, 0.5);
                let half_iqr = 0.5 * (quantile(&v, 0.75) - quantile(&v, 0.25));
                scales[i] = half_iqr.max(scale_floor(center[i]));
            }
            Ok(DensityModel::Cauchy { center, scales })
        }
        DensityFamily::Kernel => {
            let n = ens.n_ens() as f64;
            let d = ens.n_state() as f64;
            let factor = (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0));
            let mean = ens.mean();
            let bandwidth = DVector::from_fn(ens.n_state(), |i, _| {
                let row = ens.states().row(i);
                let var = if ens.n_ens() > 1 {
                    row.iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (var.sqrt() * factor).max(scale_floor(mean[i]))
            });
            Ok(DensityModel::Kernel { anchors: ens.states().clone(), bandwidth })
        }
    }
}

fn check_huber(delta1: f64, delta2: f64) -> Result<()> {
    if !(delta1 > 0.0 && delta2 > 0.0) {
        return Err(VfpError::InvalidParameter(format!(
            "Huber thresholds must be positive, got δ1 = {delta1}, δ2 = {delta2}"
        )));
    }
    Ok(())
}

fn scale_floor(center: f64) -> f64 {
    1e-8 * (1.0 + center.abs())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl DensityModel {
    pub fn gaussian(center: StateVector, covariance: DMatrix<f64>) -> Result<Self> {
        Ok(Self::Gaussian { center, spread: Spread::dense(covariance, false)? })
    }

    pub fn laplace(center: StateVector, covariance: DMatrix<f64>) -> Result<Self> {
        Ok(Self::Laplace { center, spread: Spread::dense(covariance, false)? })
    }

    pub fn huber(center: StateVector, covariance: DMatrix<f64>, delta1: f64, delta2: f64) -> Result<Self> {
        check_huber(delta1, delta2)?;
        Ok(Self::Huber { center, spread: Spread::dense(covariance, false)?, delta1, delta2 })
    }

    pub fn cauchy(center: StateVector, scales: DVector<f64>) -> Result<Self> {
        if scales.len() != center.len() {
            return Err(VfpError::DimensionMismatch { expected: center.len(), got: scales.len() });
        }
        if scales.iter().any(|&g| !(g > 0.0)) {
            return Err(VfpError::InvalidParameter("Cauchy scales must be positive".into()));
        }
        Ok(Self::Cauchy { center, scales })
    }

    pub fn kernel(anchors: DMatrix<f64>, bandwidth: DVector<f64>) -> Result<Self> {
        if bandwidth.len() != anchors.nrows() {
            return Err(VfpError::DimensionMismatch { expected: anchors.nrows(), got: bandwidth.len() });
        }
        if bandwidth.iter().any(|&h| !(h > 0.0)) {
            return Err(VfpError::InvalidParameter("kernel bandwidth must be positive".into()));
        }
        Ok(Self::Kernel { anchors, bandwidth })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { center, .. }
            | Self::Laplace { center, .. }
            | Self::Huber { center, .. }
            | Self::Cauchy { center, .. } => center.len(),
            Self::Kernel { anchors, .. } => anchors.nrows(),
        }
    }

    pub fn family(&self) -> DensityFamily {
        match self {
            Self::Gaussian { .. } => DensityFamily::Gaussian,
            Self::Laplace { .. } => DensityFamily::Laplace,
            Self::Huber { delta1, delta2, .. } => DensityFamily::Huber { delta1: *delta1, delta2: *delta2 },
            Self::Cauchy { .. } => DensityFamily::Cauchy,
            Self::Kernel { .. } => DensityFamily::Kernel,
        }
    }

    pub fn grad_log_density(&self, x: &DVector<f64>) -> StateVector {
        self.score(x).grad
    }

    pub fn score(&self, x: &DVector<f64>) -> Score {
        assert_eq!(x.len(), self.dim(), "state dimension");
        let regular = |grad| Score { grad, singular: false };
        match self {
            Self::Gaussian { center, spread } => regular(-spread.solve(&(x - center))),
            Self::Laplace { center, spread } => match laplace_factor(center, spread, x) {
                Some((f, pu)) => regular(pu * -f),
                None => Score { grad: DVector::zeros(x.len()), singular: true },
            },
            Self::Huber { center, spread, delta1, delta2 } => match laplace_factor(center, spread, x) {
                Some((f, pu)) if delta1 * f <= *delta2 => regular(pu * -(delta1 * f)),
                Some((_, pu)) => regular(pu * -*delta2),
                None => Score { grad: DVector::zeros(x.len()), singular: true },
            },
            Self::Cauchy { center, scales } => regular(DVector::from_fn(x.len(), |i, _| {
                let u = x[i] - center[i];
                -2.0 * u / (scales[i] * scales[i] + u * u)
            })),
            Self::Kernel { anchors, bandwidth } => regular(kernel_score(anchors, bandwidth, x)),
        }
    }

    /// Hessian of the log-density: exact `−P⁻¹` for the Gaussian family,
    /// symmetrized central differences of the gradient otherwise.
    pub fn hessian_log_density(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(h) = self.constant_hessian() {
            return h;
        }
        let n = x.len();
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-5 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (self.grad_log_density(&xp) - self.grad_log_density(&xm)) / (2.0 * h);
            hess.set_column(j, &col);
        }
        symmetrize(&hess)
    }

    /// The Hessian when it does not depend on `x`.
    pub fn constant_hessian(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::Gaussian { spread, .. } => Some(-spread.precision()),
            _ => None,
        }
    }

    /// Applies `P⁻¹` for covariance families.
    pub fn spread(&self) -> Option<&Spread> {
        match self {
            Self::Gaussian { spread, .. } | Self::Laplace { spread, .. } | Self::Huber { spread, .. } => Some(spread),
            _ => None,
        }
    }
}

/// `((2/θ) K_{ν−1}(θ)/K_ν(θ), P⁻¹(x − x̄))`, or `None` near the centre.
fn laplace_factor(center: &DVector<f64>, spread: &Spread, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let u = x - center;
    let pu = spread.solve(&u);
    let theta = (2.0 * u.dot(&pu)).max(0.0).sqrt();
    if theta < SINGULAR_RADIUS {
        return None;
    }
    let nu = 1.0 - 0.5 * x.len() as f64;
    let ratio = bessel_k_ratio(nu, theta).ok()?;
    Some((2.0 / theta * ratio, pu))
}

fn kernel_score(anchors: &DMatrix<f64>, bandwidth: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let inv_h2 = bandwidth.map(|h| 1.0 / (h * h));
    let logs: Vec<f64> = anchors
        .column_iter()
        .map(|a| {
            -0.5 * a.iter().zip(x.iter()).zip(inv_h2.iter()).map(|((ai, xi), w)| (xi - ai).powi(2) * w).sum::<f64>()
        })
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = DVector::zeros(x.len());
    let mut den = 0.0;
    for (a, l) in anchors.column_iter().zip(&logs) {
        let w = (l - peak).exp();
        den += w;
        num += (a - x).component_mul(&inv_h2) * w;
    }
    num / den
}
