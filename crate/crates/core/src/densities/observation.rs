//! Observation operators and error models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::SpdFactor;
use crate::{Result, StateVector, VfpError};

/// Pointwise transform applied to the observed components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsTransform {
    #[default]
    Identity,
    Square,
}

/// `H(x)_k = f(x_{indices[k]})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperator {
    n_state: usize,
    indices: Vec<usize>,
    transform: ObsTransform,
}

impl ObservationOperator {
    pub fn new(n_state: usize, indices: Vec<usize>, transform: ObsTransform) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_state) {
            return Err(VfpError::InvalidParameter(format!(
                "observed index {bad} out of range for state dimension {n_state}"
            )));
        }
        if indices.is_empty() {
            return Err(VfpError::InvalidParameter("no observed indices".into()));
        }
        Ok(Self { n_state, indices, transform })
    }

    pub fn identity(n_state: usize) -> Self {
        Self { n_state, indices: (0..n_state).collect(), transform: ObsTransform::Identity }
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_obs(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn transform(&self) -> ObsTransform {
        self.transform
    }

    pub fn is_linear(&self) -> bool {
        self.transform == ObsTransform::Identity
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n_obs(),
            self.indices.iter().map(|&i| match self.transform {
                ObsTransform::Identity => x[i],
                ObsTransform::Square => x[i] * x[i],
            }),
        )
    }

    /// `H'(x)ᵀ w`.
    pub fn adjoint(&self, x: &DVector<f64>, w: &DVector<f64>) -> StateVector {
        let mut out = DVector::zeros(self.n_state);
        for (k, &i) in self.indices.iter().enumerate() {
            out[i] += match self.transform {
                ObsTransform::Identity => w[k],
                ObsTransform::Square => 2.0 * x[i] * w[k],
            };
        }
        out
    }

    /// `H'(x)` as a dense `N_obs × N_state` matrix.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n_obs(), self.n_state);
        for (k, &i) in self.indices.iter().enumerate() {
            h[(k, i)] = match self.transform {
                ObsTransform::Identity => 1.0,
                ObsTransform::Square => 2.0 * x[i],
            };
        }
        h
    }
}

#[derive(Debug, Clone)]
pub enum ObsError {
    Gaussian {
        covariance: DMatrix<f64>,
        factor: SpdFactor,
    },
    /// Independent Cauchy errors with per-component scales.
    Cauchy {
        scales: DVector<f64>,
    },
}

impl ObsError {
    pub fn gaussian(covariance: DMatrix<f64>) -> Result<Self> {
        let factor = SpdFactor::new(&covariance, false)?;
        Ok(Self::Gaussian { covariance, factor })
    }

    pub fn gaussian_diagonal(variances: &DVector<f64>) -> Result<Self> {
        Self::gaussian(DMatrix::from_diagonal(variances))
    }

    pub fn cauchy(scales: DVector<f64>) -> Result<Self> {
        if scales.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(VfpError::InvalidParameter("Cauchy scales must be positive".into()));
        }
        Ok(Self::Cauchy { scales })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { covariance, .. } => covariance.nrows(),
            Self::Cauchy { scales } => scales.len(),
        }
    }

    /// Per-component variances (Gaussian) or squared scales (Cauchy), when
    /// the errors are independent.
    pub fn diagonal(&self) -> Option<DVector<f64>> {
        match self {
            Self::Gaussian { covariance, .. } => {
                let n = covariance.nrows();
                let off = (0..n).any(|i| (0..n).any(|j| i != j && covariance[(i, j)] != 0.0));
                (!off).then(|| covariance.diagonal())
            }
            Self::Cauchy { scales } => Some(scales.map(|g| g * g)),
        }
    }

    /// `∂/∂d log p(d)` for the residual `d = H(x) − y`, negated so that it is
    /// the gradient with respect to `H(x)`.
    fn residual_score(&self, d: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Gaussian { factor, .. } => -factor.solve(d),
            Self::Cauchy { scales } => d.zip_map(scales, |di, g| -2.0 * di / (g * g + di * di)),
        }
    }

    /// Log-density of the residual, up to an additive constant.
    fn log_density(&self, d: &DVector<f64>) -> f64 {
        match self {
            Self::Gaussian { factor, .. } => -0.5 * d.dot(&factor.solve(d)),
            Self::Cauchy { scales } => -d.zip_map(scales, |di, g| (1.0 + (di / g).powi(2)).ln()).sum(),
        }
    }

    /// Restriction to a subset of observation components.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        match self {
            Self::Gaussian { covariance, .. } => Self::gaussian(covariance.select_rows(rows).select_columns(rows)),
            Self::Cauchy { scales } => Self::cauchy(scales.select_rows(rows)),
        }
    }
}

/// One observation `y = H(x) + η` at a single assimilation time.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    operator: ObservationOperator,
    error: ObsError,
    value: DVector<f64>,
}

impl ObservationModel {
    pub fn new(operator: ObservationOperator, error: ObsError, value: DVector<f64>) -> Result<Self> {
        for got in [error.dim(), value.len()] {
            if got != operator.n_obs() {
                return Err(VfpError::DimensionMismatch { expected: operator.n_obs(), got });
            }
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(VfpError::NonFinite("observation"));
        }
        Ok(Self { operator, error, value })
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.operator
    }

    pub fn error(&self) -> &ObsError {
        &self.error
    }

    pub fn value(&self) -> &DVector<f64> {
        &self.value
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.operator.apply(x) - &self.value
    }

    /// `∇ₓ log p(y | x)`.
    pub fn grad_log_likelihood(&self, x: &DVector<f64>) -> StateVector {
        let score = self.error.residual_score(&self.residual(x));
        self.operator.adjoint(x, &score)
    }

    /// `log p(y | x)` up to an additive constant.
    pub fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        self.error.log_density(&self.residual(x))
    }

    /// Gauss-Newton Hessian `−H'ᵀ W H'` with `W = R⁻¹` (Gaussian) or the
    /// residual-free Cauchy curvature `diag(2/γ²)`.
    pub fn gauss_newton_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let h = self.operator.jacobian(x);
        let w = match &self.error {
            ObsError::Gaussian { factor, .. } => factor.inverse(),
            ObsError::Cauchy { scales } => DMatrix::from_diagonal(&scales.map(|g| 2.0 / (g * g))),
        };
        -(h.transpose() * w * h)
    }

    /// The observations of the given state components only, as an
    /// observation of the sub-state `x[states]`.
    ///
    /// Requires independent errors. Returns `None` if none of the states is
    /// observed.
    pub fn localize(&self, states: &[usize]) -> Result<Option<ObservationModel>> {
        if self.error.diagonal().is_none() {
            return Err(VfpError::InvalidParameter("observation localization needs independent errors".into()));
        }
        let mut rows = Vec::new();
        let mut local_idx = Vec::new();
        for (k, &i) in self.operator.indices.iter().enumerate() {
            if let Some(pos) = states.iter().position(|&s| s == i) {
                rows.push(k);
                local_idx.push(pos);
            }
        }
        if rows.is_empty() {
            return Ok(None);
        }
        let operator = ObservationOperator::new(states.len(), local_idx, self.operator.transform)?;
        let error = self.error.select(&rows)?;
        Ok(Some(ObservationModel::new(operator, error, self.value.select_rows(&rows))?))
    }
}
