use serde::{Deserialize, Serialize};

use crate::{Result, VfpError};

/// The metric `A_τ` that preconditions the KL gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Identity,
    /// `A_τ = D`; the current-density term drops out of the drift.
    Langevin,
}

/// Choice of the state-independent diffusion factor `σ`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionSpec {
    #[default]
    None,
    /// `σ = α A^b`, the scaled background anomalies.
    BackgroundAnomalies { alpha: f64 },
    /// `σ = α A_τ`, the scaled anomalies of the current ensemble.
    CurrentAnomalies { alpha: f64 },
    /// `σ = α B^{1/2}` for a climatological covariance supplied by the caller.
    Climatological { alpha: f64 },
}

impl DiffusionSpec {
    pub fn alpha(&self) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::BackgroundAnomalies { alpha } | Self::CurrentAnomalies { alpha } | Self::Climatological { alpha } => {
                alpha
            }
        }
    }

    /// Same kind of diffusion with a different scale.
    pub fn with_alpha(self, alpha: f64) -> Self {
        match self {
            Self::None => Self::None,
            Self::BackgroundAnomalies { .. } => Self::BackgroundAnomalies { alpha },
            Self::CurrentAnomalies { .. } => Self::CurrentAnomalies { alpha },
            Self::Climatological { .. } => Self::Climatological { alpha },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regularization {
    /// Constant Coulomb strength `β`.
    pub beta: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self { beta: 0.0 }
    }
}

/// Pseudo-time step control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub dtau0: f64,
    /// Accepted steps per flow.
    pub max_steps: usize,
    pub max_rejections: usize,
    pub shrink_factor: f64,
    pub growth_factor: f64,
    pub max_dtau: f64,
    pub min_dtau: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            dtau0: 0.1,
            max_steps: 100,
            max_rejections: 30,
            shrink_factor: 0.5,
            growth_factor: 1.2,
            max_dtau: 1.0,
            min_dtau: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Termination {
    /// Stop once `‖x̄_{τ+Δτ} − x̄_τ‖ < ε Δτ`.
    pub epsilon: f64,
}

impl Default for Termination {
    fn default() -> Self {
        Self { epsilon: 1e-2 }
    }
}

/// How the linear system `(I − Δτ J) s = F` of each step is handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverSpec {
    /// Per-particle Jacobian from analytic (Gaussian) or finite-difference
    /// Hessians of the posterior, projected onto negative semidefinite
    /// matrices. The current-density Hessian is included only on request.
    BlockAnalytic {
        #[serde(default)]
        current_hessian: bool,
    },
    /// `J = 0`: plain Euler-Maruyama.
    Explicit,
    /// Matrix-free GMRES with finite-difference Jacobian-vector products of
    /// the full per-particle drift.
    FdJvpGmres { tol: f64, max_iter: usize },
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self::BlockAnalytic { current_hessian: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub metric: Metric,
    pub diffusion: DiffusionSpec,
    pub regularization: Regularization,
    pub step: StepControl,
    pub termination: Termination,
    pub solver: SolverSpec,
    pub rng_seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Identity,
            diffusion: DiffusionSpec::None,
            regularization: Regularization::default(),
            step: StepControl::default(),
            termination: Termination::default(),
            solver: SolverSpec::default(),
            rng_seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VfpError::InvalidParameter(msg));
        let s = &self.step;
        if !(self.diffusion.alpha() >= 0.0) {
            return bad(format!("diffusion alpha must be nonnegative, got {}", self.diffusion.alpha()));
        }
        if !(self.regularization.beta >= 0.0) {
            return bad(format!("regularization beta must be nonnegative, got {}", self.regularization.beta));
        }
        if !(s.dtau0 > 0.0 && s.max_dtau >= s.dtau0 && s.min_dtau > 0.0 && s.min_dtau <= s.dtau0) {
            return bad(format!("step sizes must satisfy 0 < min_dtau <= dtau0 <= max_dtau, got {s:?}"));
        }
        if !(s.shrink_factor > 0.0 && s.shrink_factor < 1.0 && s.growth_factor >= 1.0) {
            return bad("shrink_factor must lie in (0, 1) and growth_factor be >= 1".into());
        }
        if s.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if !(self.termination.epsilon > 0.0) {
            return bad(format!("termination epsilon must be positive, got {}", self.termination.epsilon));
        }
        if let SolverSpec::FdJvpGmres { tol, max_iter } = self.solver {
            if !(tol > 0.0) || max_iter == 0 {
                return bad("GMRES needs tol > 0 and max_iter > 0".into());
            }
        }
        if self.metric == Metric::Langevin && self.diffusion == DiffusionSpec::None {
            return bad("the Langevin metric needs a nonzero diffusion".into());
        }
        Ok(())
    }
}
