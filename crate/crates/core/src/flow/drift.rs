use nalgebra::{DMatrix, DVector};

use super::config::{DiffusionSpec, FlowConfig, Metric};
use crate::densities::{fit, DensityFamily, DensityModel, FitOptions, ObservationModel};
use crate::ensemble::Ensemble;
use crate::{Result, StateVector, VfpError};

/// The target of a flow: anything that can supply `∇ log 𝒫^a` and an
/// approximation of its Hessian.
pub trait Posterior: Sync {
    fn dim(&self) -> usize;

    fn grad_log(&self, x: &DVector<f64>) -> Result<StateVector>;

    /// Approximate Hessian of `log 𝒫^a` at `x`.
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// When true the flow evaluates [`Posterior::hessian`] once per step at
    /// the ensemble mean and shares it across particles.
    fn hessian_is_shared(&self) -> bool;
}

/// `𝒫^a(x) ∝ 𝒫^b(x) · p(y | x)` for a single observation time.
#[derive(Debug, Clone)]
pub struct FilterPosterior {
    pub prior: DensityModel,
    pub obs: ObservationModel,
    constant_hessian: Option<DMatrix<f64>>,
}

impl FilterPosterior {
    pub fn new(prior: DensityModel, obs: ObservationModel) -> Result<Self> {
        if prior.dim() != obs.operator().n_state() {
            return Err(VfpError::DimensionMismatch { expected: prior.dim(), got: obs.operator().n_state() });
        }
        let constant_hessian = match prior.constant_hessian() {
            Some(h) if obs.operator().is_linear() => {
                let x = DVector::zeros(prior.dim());
                Some(h + obs.gauss_newton_hessian(&x))
            }
            _ => None,
        };
        Ok(Self { prior, obs, constant_hessian })
    }
}

impl Posterior for FilterPosterior {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn grad_log(&self, x: &DVector<f64>) -> Result<StateVector> {
        Ok(posterior_grad_log(&self.prior, &self.obs, x))
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some(h) = &self.constant_hessian {
            return Ok(h.clone());
        }
        Ok(self.prior.hessian_log_density(x) + self.obs.gauss_newton_hessian(x))
    }

    fn hessian_is_shared(&self) -> bool {
        self.constant_hessian.is_some()
    }
}

/// `∇ log 𝒫^b(x) + ∇ log p(y | x)`.
pub fn posterior_grad_log(prior: &DensityModel, obs: &ObservationModel, x: &DVector<f64>) -> StateVector {
    prior.grad_log_density(x) + obs.grad_log_likelihood(x)
}

/// Inputs a flow needs besides the target itself.
pub struct FlowProblem<'a> {
    pub posterior: &'a dyn Posterior,
    pub current_family: DensityFamily,
    pub fit_options: FitOptions,
    /// `A^b`, required by [`DiffusionSpec::BackgroundAnomalies`].
    pub background_anomalies: Option<DMatrix<f64>>,
    /// `B^{1/2}`, required by [`DiffusionSpec::Climatological`].
    pub climatology_sqrt: Option<DMatrix<f64>>,
}

/// Everything the drift of one step depends on, frozen at the start of the step.
pub struct DriftContext<'a> {
    pub posterior: &'a dyn Posterior,
    /// Fit of the current ensemble; absent under the Langevin metric, which
    /// does not use it.
    pub current: Option<DensityModel>,
    /// `σ`, `N_state × M`.
    pub sigma: Option<DMatrix<f64>>,
    /// `D = σσᵀ/2`.
    pub diffusion: Option<DMatrix<f64>>,
    pub metric: Metric,
    pub beta: f64,
}

impl<'a> DriftContext<'a> {
    pub fn new(problem: &FlowProblem<'a>, ens: &Ensemble, cfg: &FlowConfig) -> Result<Self> {
        let n = problem.posterior.dim();
        if ens.n_state() != n {
            return Err(VfpError::DimensionMismatch { expected: n, got: ens.n_state() });
        }
        let sigma = diffusion_factor(&cfg.diffusion, problem, ens)?;
        let diffusion = sigma.as_ref().map(|s| s * s.transpose() * 0.5);
        let current = match cfg.metric {
            Metric::Identity => Some(fit(problem.current_family, ens, &problem.fit_options)?),
            Metric::Langevin => None,
        };
        Ok(Self {
            posterior: problem.posterior,
            current,
            sigma,
            diffusion,
            metric: cfg.metric,
            beta: cfg.regularization.beta,
        })
    }

    /// `A_τ v`.
    pub fn apply_metric(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.metric {
            Metric::Identity => v.clone(),
            Metric::Langevin => match &self.diffusion {
                Some(d) => d * v,
                None => DVector::zeros(v.len()),
            },
        }
    }

    /// `A_τ` as a dense matrix.
    pub fn metric_matrix(&self) -> DMatrix<f64> {
        let n = self.posterior.dim();
        match (self.metric, &self.diffusion) {
            (Metric::Identity, _) => DMatrix::identity(n, n),
            (Metric::Langevin, Some(d)) => d.clone(),
            (Metric::Langevin, None) => DMatrix::zeros(n, n),
        }
    }
}

fn diffusion_factor(spec: &DiffusionSpec, problem: &FlowProblem<'_>, ens: &Ensemble) -> Result<Option<DMatrix<f64>>> {
    let alpha = spec.alpha();
    if alpha == 0.0 {
        return Ok(None);
    }
    let missing = |what: &str| VfpError::InvalidParameter(format!("{what} diffusion requested but not supplied"));
    let base = match spec {
        DiffusionSpec::None => return Ok(None),
        DiffusionSpec::BackgroundAnomalies { .. } => {
            problem.background_anomalies.clone().ok_or_else(|| missing("background-anomaly"))?
        }
        DiffusionSpec::CurrentAnomalies { .. } => ens.anomalies()?,
        DiffusionSpec::Climatological { .. } => {
            problem.climatology_sqrt.clone().ok_or_else(|| missing("climatological"))?
        }
    };
    if base.nrows() != ens.n_state() {
        return Err(VfpError::DimensionMismatch { expected: ens.n_state(), got: base.nrows() });
    }
    Ok(Some(base * alpha))
}

/// Optimal drift without regularization:
/// `A ∇log 𝒫^a + (D − A) ∇log q_τ` (`d = div D = 0` for every supported `σ`).
pub fn optimal_drift(ctx: &DriftContext<'_>, x: &DVector<f64>) -> Result<StateVector> {
    let ga = ctx.posterior.grad_log(x)?;
    match ctx.metric {
        Metric::Langevin => Ok(ctx.apply_metric(&ga)),
        Metric::Identity => {
            let q = ctx.current.as_ref().expect("identity metric needs the current density fit");
            let gq = q.grad_log_density(x);
            let mut f = ga - &gq;
            if let Some(d) = &ctx.diffusion {
                f += d * gq;
            }
            Ok(f)
        }
    }
}

/// Coulomb repulsion on particle `e` located at `x`, from all other
/// particles of `ens`: `(β/N) A Σ_{i≠e} (x − x_i) / ‖x − x_i‖³`.
///
/// Distances are floored at `1e-8 (1 + ‖x‖)` so coincident particles give
/// bounded forces.
pub fn coulomb_force_at(
    x: &DVector<f64>,
    e: usize,
    ens: &Ensemble,
    beta: f64,
    ctx: Option<&DriftContext<'_>>,
) -> StateVector {
    let mut f = DVector::zeros(x.len());
    if beta == 0.0 {
        return f;
    }
    let floor = 1e-8 * (1.0 + x.norm());
    for (i, xi) in ens.states().column_iter().enumerate() {
        if i == e {
            continue;
        }
        let diff = x - xi;
        let r = diff.norm().max(floor);
        f += diff / (r * r * r);
    }
    f *= beta / ens.n_ens() as f64;
    match ctx {
        Some(ctx) => ctx.apply_metric(&f),
        None => f,
    }
}

/// [`coulomb_force_at`] for particle `e` at its own position, identity metric.
pub fn coulomb_force(e: usize, ens: &Ensemble, beta: f64) -> StateVector {
    coulomb_force_at(&ens.member(e).into_owned(), e, ens, beta, None)
}

/// `σ ξ`, or zero without diffusion.
pub fn diffusion_apply(sigma: Option<&DMatrix<f64>>, noise: &DVector<f64>, n_state: usize) -> StateVector {
    match sigma {
        Some(s) => s * noise,
        None => DVector::zeros(n_state),
    }
}

/// Full regularized drift of particle `e` when placed at `x`, with the rest
/// of the ensemble frozen.
pub fn particle_drift(ctx: &DriftContext<'_>, ens: &Ensemble, e: usize, x: &DVector<f64>) -> Result<StateVector> {
    let mut f = optimal_drift(ctx, x)?;
    if ctx.beta > 0.0 {
        f += coulomb_force_at(x, e, ens, ctx.beta, Some(ctx));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{ObsError, ObservationOperator};
    use crate::flow::config::Metric;

    fn scalar_obs(y: f64, r: f64) -> ObservationModel {
        ObservationModel::new(
            ObservationOperator::identity(1),
            ObsError::gaussian(DMatrix::from_element(1, 1, r)).unwrap(),
            DVector::from_element(1, y),
        )
        .unwrap()
    }

    fn std_normal_prior() -> DensityModel {
        DensityModel::gaussian(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap()
    }

    #[test]
    fn conjugate_posterior_gradient() {
        let g = posterior_grad_log(&std_normal_prior(), &scalar_obs(2.0, 1.0), &DVector::from_element(1, 1.0));
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn uninformative_observation_leaves_prior() {
        let prior = std_normal_prior();
        let x = DVector::from_element(1, 0.7);
        let g = posterior_grad_log(&prior, &scalar_obs(5.0, 1e12), &x);
        assert!((g - prior.grad_log_density(&x)).amax() < 1e-9);
    }

    #[test]
    fn coulomb_pair_and_antisymmetry() {
        let ens = Ensemble::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0])).unwrap();
        assert_eq!(coulomb_force(0, &ens, 2.0)[0], -1.0);
        assert_eq!(coulomb_force(0, &ens, 0.0)[0], 0.0);

        let x = DMatrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64 * 1.3).sin());
        let ens = Ensemble::new(x).unwrap();
        let total = (0..7).fold(DVector::zeros(3), |acc, e| acc + coulomb_force(e, &ens, 0.5));
        assert!(total.amax() < 1e-10);
    }

    #[test]
    fn coincident_particles_stay_finite() {
        let ens = Ensemble::new(DMatrix::from_element(2, 3, 1.0)).unwrap();
        assert!(coulomb_force(1, &ens, 1.0).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn langevin_scalar_drift() {
        // Posterior N(0, 1), D = 2 from σ = 2.
        let post = FilterPosterior::new(std_normal_prior(), scalar_obs(0.0, 1e300)).unwrap();
        let ctx = DriftContext {
            posterior: &post,
            current: None,
            sigma: Some(DMatrix::from_element(1, 1, 2.0)),
            diffusion: Some(DMatrix::from_element(1, 1, 2.0)),
            metric: Metric::Langevin,
            beta: 0.0,
        };
        let f = optimal_drift(&ctx, &DVector::from_element(1, 3.0)).unwrap();
        assert!((f[0] + 6.0).abs() < 1e-12);
    }

    #[test]
    fn unit_diffusion_cancels_current_term() {
        let post = FilterPosterior::new(std_normal_prior(), scalar_obs(2.0, 1.0)).unwrap();
        let q = DensityModel::gaussian(DVector::from_element(1, 5.0), DMatrix::from_element(1, 1, 0.1)).unwrap();
        let ctx = DriftContext {
            posterior: &post,
            current: Some(q),
            sigma: Some(DMatrix::from_element(1, 1, 2f64.sqrt())),
            diffusion: Some(DMatrix::from_element(1, 1, 1.0)),
            metric: Metric::Identity,
            beta: 0.0,
        };
        let x = DVector::from_element(1, -0.4);
        let f = optimal_drift(&ctx, &x).unwrap();
        assert!((f - post.grad_log(&x).unwrap()).amax() < 1e-12);
    }
}
