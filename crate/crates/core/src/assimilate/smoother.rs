//! Strong-constraint VFP smoother: the flow acts on the initial condition of
//! each assimilation window.

use nalgebra::{DMatrix, DVector};

use super::filter::{global_flow, AnalysisContext, CycleResult, CyclingSetup};
use super::method::MethodSpec;
use crate::baselines::{etkf_analysis, gaussian_surrogate};
use crate::densities::{fit, DensityModel, ObservationModel};
use crate::dynamics::{ModelSystem, StepPolicy, WindowRecord};
use crate::ensemble::Ensemble;
use crate::flow::{optimal_drift, DriftContext, FlowConfig, Posterior};
use crate::metrics::MetricSeries;
use crate::rng::stream;
use crate::{Result, StateVector, VfpError};

/// Posterior of the window's initial condition under a perfect model.
///
/// `obs[k]` is taken at `times[k]`; `times[0]` is the analysis time, and an
/// observation there makes a one-observation window the filter posterior.
pub struct SmootherPosterior<'a> {
    pub model: &'a dyn ModelSystem,
    pub policy: StepPolicy,
    pub prior: DensityModel,
    pub obs: Vec<ObservationModel>,
    pub times: Vec<f64>,
}

impl<'a> SmootherPosterior<'a> {
    pub fn new(
        model: &'a dyn ModelSystem,
        policy: StepPolicy,
        prior: DensityModel,
        obs: Vec<ObservationModel>,
        times: Vec<f64>,
    ) -> Result<Self> {
        if obs.is_empty() || obs.len() != times.len() {
            return Err(VfpError::DimensionMismatch { expected: times.len().max(1), got: obs.len() });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(VfpError::InvalidParameter("window times must increase".into()));
        }
        if prior.dim() != model.dimension() {
            return Err(VfpError::DimensionMismatch { expected: model.dimension(), got: prior.dim() });
        }
        Ok(Self { model, policy, prior, obs, times })
    }

    fn forward(&self, x0: &DVector<f64>) -> Result<WindowRecord> {
        WindowRecord::new(self.model, x0, &self.times, self.policy)
    }

    /// `Σ_k M*_{0,k} ∇ log p(y_k | M_{0,k}(x0))`.
    pub fn misfit_gradient(&self, x0: &DVector<f64>) -> Result<StateVector> {
        let rec = self.forward(x0)?;
        Ok(self.adjoint_forcing(&rec))
    }

    fn adjoint_forcing(&self, rec: &WindowRecord) -> StateVector {
        let forcings: Vec<StateVector> =
            self.obs.iter().zip(rec.states()).map(|(o, x)| o.grad_log_likelihood(x)).collect();
        rec.adjoint_sum(self.model, &forcings)
    }

    /// Observation cost `−Σ_k log p(y_k | M_{0,k}(x0))` up to a constant; for
    /// Gaussian errors this is the 4D-Var misfit `½ Σ ‖H(M_{0,k} x0) − y_k‖²_{R⁻¹}`.
    pub fn misfit_cost(&self, x0: &DVector<f64>) -> Result<f64> {
        let rec = self.forward(x0)?;
        Ok(-self.obs.iter().zip(rec.states()).map(|(o, x)| o.log_likelihood(x)).sum::<f64>())
    }
}

impl Posterior for SmootherPosterior<'_> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn grad_log(&self, x: &DVector<f64>) -> Result<StateVector> {
        let g = self.prior.grad_log_density(x) + self.misfit_gradient(x)?;
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(VfpError::NonFinite("smoother gradient"))
        }
    }

    /// Gauss-Newton window Hessian `∇² log p_b + Σ_k M_kᵀ G_k M_k`.
    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = x.len();
        let rec = self.forward(x)?;
        let tlm = rec.tangent_linear_matrices(self.model, &DMatrix::identity(n, n));
        let mut h = self.prior.hessian_log_density(x);
        for ((o, xk), m) in self.obs.iter().zip(rec.states()).zip(&tlm) {
            h += m.transpose() * o.gauss_newton_hessian(xk) * m;
        }
        Ok(h)
    }

    /// Always evaluated once per step at the ensemble mean: per-particle
    /// tangent-linear sweeps would dominate the cost.
    fn hessian_is_shared(&self) -> bool {
        true
    }
}

/// Identity- or Langevin-metric drift of one particle towards a smoother
/// posterior; `ctx.posterior` is expected to be a [`SmootherPosterior`].
pub fn vfps_drift(ctx: &DriftContext<'_>, x0: &DVector<f64>) -> Result<StateVector> {
    optimal_drift(ctx, x0)
}

/// Smoother analysis of the initial condition of one window.
#[allow(clippy::too_many_arguments)]
pub fn vfps_analysis(
    background: &Ensemble,
    model: &dyn ModelSystem,
    policy: StepPolicy,
    obs: &[ObservationModel],
    times: &[f64],
    spec: &MethodSpec,
    cfg: &FlowConfig,
    ctx: AnalysisContext<'_>,
) -> Result<CycleResult> {
    spec.validate(background.n_state())?;
    let prior = fit(spec.prior, background, &spec.fit_options())?;
    let posterior = SmootherPosterior::new(model, policy, prior, obs.to_vec(), times.to_vec())?;
    let start = if spec.etkf_warm_start {
        etkf_analysis(background, &gaussian_surrogate(&obs[0])?, 1.0)?
    } else {
        background.clone()
    };
    global_flow(background, start, &posterior, spec, cfg, ctx)
}

/// Cycles the smoother over consecutive non-overlapping windows of
/// `spec.smoother.window` observations.
///
/// Each window is analysed at the time of its first observation; the
/// analysis ensemble is then propagated through the window, which supplies
/// the recorded means, and on to the start of the next window.
pub fn vfps_run(
    setup: &CyclingSetup<'_>,
    obs: &[ObservationModel],
    ens0: Ensemble,
    spec: &MethodSpec,
    cfg: &FlowConfig,
    climatology_sqrt: Option<&DMatrix<f64>>,
) -> Result<MetricSeries> {
    let window =
        spec.smoother.ok_or_else(|| VfpError::InvalidParameter("smoother run needs a smoother window".into()))?.window;
    spec.validate(ens0.n_state())?;
    cfg.validate()?;
    setup.check(obs)?;
    let mut series = MetricSeries::new(ens0.n_ens(), setup.rank_component, setup.spinup);
    let mut rng = stream(setup.rank_seed, &[]);
    let mut ens = ens0;
    let mut k = 1;
    while k <= setup.cycles() {
        let end = (k + window).min(setup.cycles() + 1);
        let result = setup.forecast(&ens, k).and_then(|bg| {
            let ctx = AnalysisContext { climatology_sqrt, cycle: k as u64 };
            vfps_analysis(&bg, setup.model, setup.policy, &obs[k - 1..end - 1], &setup.times[k..end], spec, cfg, ctx)
        });
        let res = match result {
            Ok(res) => res,
            Err(err) => {
                series.failure = Some(format!("window at cycle {k}: {err}"));
                break;
            }
        };
        ens = res.analysis;
        let mut failed = false;
        for j in k..end {
            if j > k {
                match setup.forecast(&ens, j) {
                    Ok(next) => ens = next,
                    Err(err) => {
                        series.failure = Some(format!("cycle {j}: {err}"));
                        failed = true;
                        break;
                    }
                }
            }
            series.record(&ens, &setup.truth[j], res.flow_steps, res.converged, &mut rng);
        }
        if failed {
            break;
        }
        k = end;
    }
    Ok(series)
}
