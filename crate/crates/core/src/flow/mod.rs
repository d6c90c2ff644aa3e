//! The particle-flow engine.
//!
//! Particles follow `dx = F dτ + σ dW` in pseudo-time, where `F` is the
//! KL-optimal drift towards the posterior for the chosen metric, plus an
//! optional Coulomb repulsion. Steps use the Rosenbrock-Euler-Maruyama scheme
//! and stop once the ensemble mean is stationary.

mod config;
mod drift;
mod gmres;
mod stepper;

pub use config::{DiffusionSpec, FlowConfig, Metric, Regularization, SolverSpec, StepControl, Termination};
pub use drift::{
    coulomb_force, coulomb_force_at, diffusion_apply, optimal_drift, particle_drift, posterior_grad_log, DriftContext,
    FilterPosterior, FlowProblem, Posterior,
};
pub use gmres::gmres;
pub use stepper::{
    block_jacobian, drift_increment, flow_to_steady_state, particle_noise, rem_step, rem_update, shared_system,
    FlowOutcome, FlowStepper, GlobalFlow,
};
