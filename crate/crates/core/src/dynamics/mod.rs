//! Test dynamical systems and their discrete flow maps.
//!
//! Models are advanced with the Dormand-Prince 5(4) pair. Forward runs can be
//! recorded stage by stage so that the tangent-linear map and the discrete
//! adjoint are exact linearizations of the same discrete map.

mod integrator;
mod models;
mod recording;

pub use integrator::{integrate, propagate, StepPolicy};
pub use models::{LinearModel, Lorenz63, Lorenz96};
pub use recording::{discrete_adjoint, record, tangent_linear, Recording, WindowRecord};

use nalgebra::{DMatrix, DVector};

use crate::{Result, StateVector, VfpError};

/// An autonomous or time-dependent ODE system `x' = f(t, x)`.
pub trait ModelSystem: Send + Sync {
    fn dimension(&self) -> usize;

    fn rhs(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;

    /// Jacobian-vector product `J(x) v`.
    fn jvp(&self, t: f64, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.jacobian(t, x) * v
    }

    /// Transposed product `J(x)ᵀ w`.
    fn vjp(&self, t: f64, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.jacobian(t, x).tr_mul(w)
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        Vec::new()
    }
}

/// States of a model run at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<StateVector>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(VfpError::DimensionMismatch { expected: times.len(), got: states.len() });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(VfpError::InvalidParameter("trajectory times must increase".into()));
        }
        if states.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(VfpError::NonFinite("trajectory"));
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectory is never empty")
    }
}
