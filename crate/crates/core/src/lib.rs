//! Variational Fokker-Planck (VFP) data assimilation.
//!
//! Ensembles of particles are moved from prior samples to posterior samples by
//! integrating a McKean-Vlasov-Itô process in pseudo-time. The drift is built
//! from gradient-log-densities of parametrized families fitted to the prior
//! and to the current ensemble, optionally combined with diffusion and a
//! Coulomb repulsion between particles.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: Lorenz '63 / '96 test models, a Dormand-Prince integrator,
//!   its tangent-linear map and discrete adjoint.
//! - [`ensemble`]: the particle container and its empirical statistics.
//! - [`densities`]: parametrized families and observation likelihoods.
//! - [`flow`]: drift assembly and Rosenbrock-Euler-Maruyama pseudo-time stepping.
//! - [`assimilate`]: filter and smoother drivers, localization and shrinkage.
//! - [`baselines`] and [`metrics`]: ETKF / SIR references, RMSE and rank histograms.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assimilate;
pub mod baselines;
pub mod densities;
pub mod dynamics;
pub mod ensemble;
mod error;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod rng;

pub use error::{Result, VfpError};

/// A model state, observation or gradient vector.
pub type StateVector = nalgebra::DVector<f64>;
