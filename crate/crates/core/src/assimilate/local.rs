//! Localized VFP: every state index is updated by a flow on its local
//! influence set, with Schur-tapered covariances and local observations.

use nalgebra::{DMatrix, DVector};

use super::filter::{AnalysisContext, CycleResult};
use super::localization::{local_influence_set, taper_matrix, Geometry};
use super::method::{CovarianceSpec, MethodSpec};
use crate::baselines::{etkf_analysis, gaussian_surrogate};
use crate::densities::{fit, CovariancePolicy, DensityFamily, DensityModel, FitOptions, ObservationModel};
use crate::ensemble::Ensemble;
use crate::flow::{
    drift_increment, flow_to_steady_state, particle_noise, shared_system, DiffusionSpec, DriftContext, FlowConfig,
    FlowStepper, Metric, Posterior,
};
use crate::{Result, StateVector, VfpError};

/// Local prior times the likelihood of the observations inside the
/// influence set.
#[derive(Debug, Clone)]
pub struct LocalPosterior {
    pub prior: DensityModel,
    pub obs: Option<ObservationModel>,
    constant_hessian: Option<DMatrix<f64>>,
}

impl LocalPosterior {
    pub fn new(prior: DensityModel, obs: Option<ObservationModel>) -> Self {
        let constant_hessian = match (prior.constant_hessian(), &obs) {
            (Some(h), None) => Some(h),
            (Some(h), Some(o)) if o.operator().is_linear() => {
                Some(h + o.gauss_newton_hessian(&DVector::zeros(prior.dim())))
            }
            _ => None,
        };
        Self { prior, obs, constant_hessian }
    }
}

impl Posterior for LocalPosterior {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn grad_log(&self, x: &DVector<f64>) -> Result<StateVector> {
        let mut g = self.prior.grad_log_density(x);
        if let Some(obs) = &self.obs {
            g += obs.grad_log_likelihood(x);
        }
        Ok(g)
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if let Some(h) = &self.constant_hessian {
            return Ok(h.clone());
        }
        let mut h = self.prior.hessian_log_density(x);
        if let Some(obs) = &self.obs {
            h += obs.gauss_newton_hessian(x);
        }
        Ok(h)
    }

    fn hessian_is_shared(&self) -> bool {
        self.constant_hessian.is_some()
    }
}

/// Everything about site `i` that stays fixed during one analysis.
struct LocalSite {
    states: Vec<usize>,
    /// Position of the site inside `states`.
    pos: usize,
    fit_options: FitOptions,
    posterior: LocalPosterior,
    /// Local `σ` and `D = ½ σσᵀ` when they do not depend on the current
    /// ensemble.
    fixed_diffusion: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

/// [`FlowStepper`] that moves each component with its own local flow.
///
/// Every site sees the same noise draw `ξ_e` per particle, so the update
/// reduces to the global one when all influence sets cover the whole state.
pub struct LocalFlow<'a> {
    sites: Vec<LocalSite>,
    current_family: DensityFamily,
    cfg: &'a FlowConfig,
}

impl<'a> LocalFlow<'a> {
    pub fn new(
        background: &Ensemble,
        obs: &ObservationModel,
        spec: &MethodSpec,
        cfg: &'a FlowConfig,
        climatology_sqrt: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let (radius, geometry) = match spec.covariance {
            CovarianceSpec::Localized { radius, geometry } => (radius, geometry),
            _ => return Err(VfpError::InvalidParameter("local flow needs a localized covariance".into())),
        };
        let n = background.n_state();
        if geometry.len() != n {
            return Err(VfpError::DimensionMismatch { expected: n, got: geometry.len() });
        }
        let alpha = cfg.diffusion.alpha();
        let fixed_sigma = match cfg.diffusion {
            _ if alpha == 0.0 => None,
            DiffusionSpec::BackgroundAnomalies { .. } => Some(background.anomalies()? * alpha),
            DiffusionSpec::Climatological { .. } => {
                let b = climatology_sqrt.ok_or_else(|| {
                    VfpError::InvalidParameter("climatological diffusion requested but not supplied".into())
                })?;
                if b.nrows() != n {
                    return Err(VfpError::DimensionMismatch { expected: n, got: b.nrows() });
                }
                Some(b * alpha)
            }
            DiffusionSpec::None | DiffusionSpec::CurrentAnomalies { .. } => None,
        };
        let sites = (0..n)
            .map(|i| LocalSite::new(i, radius, &geometry, background, obs, spec, fixed_sigma.as_ref()))
            .collect::<Result<_>>()?;
        Ok(Self { sites, current_family: spec.current, cfg })
    }

    fn noise_columns(&self, ens: &Ensemble) -> usize {
        match self.cfg.diffusion {
            DiffusionSpec::None => 0,
            _ if self.cfg.diffusion.alpha() == 0.0 => 0,
            DiffusionSpec::Climatological { .. } => ens.n_state(),
            DiffusionSpec::BackgroundAnomalies { .. } | DiffusionSpec::CurrentAnomalies { .. } => ens.n_ens(),
        }
    }
}

impl LocalSite {
    fn new(
        i: usize,
        radius: f64,
        geometry: &Geometry,
        background: &Ensemble,
        obs: &ObservationModel,
        spec: &MethodSpec,
        fixed_sigma: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let states = local_influence_set(i, radius, geometry);
        let pos = states.iter().position(|&j| j == i).expect("influence set contains its centre");
        let fit_options = FitOptions { covariance: CovariancePolicy::Tapered(taper_matrix(&states, radius, geometry)) };
        let prior = fit(spec.prior, &background.rows(&states), &fit_options)?;
        let posterior = LocalPosterior::new(prior, obs.localize(&states)?);
        let fixed_diffusion = fixed_sigma.map(|s| {
            let sigma = s.select_rows(&states);
            let d = &sigma * sigma.transpose() * 0.5;
            (sigma, d)
        });
        Ok(Self { states, pos, fit_options, posterior, fixed_diffusion })
    }
}

impl FlowStepper for LocalFlow<'_> {
    fn propose(&mut self, ens: &Ensemble, dtau: f64, keys: &[u64]) -> Result<Ensemble> {
        let cfg = self.cfg;
        let cols = self.noise_columns(ens);
        let noise: Vec<DVector<f64>> = if cols > 0 {
            (0..ens.n_ens()).map(|e| particle_noise(cfg.rng_seed, keys, e, cols)).collect()
        } else {
            Vec::new()
        };
        let sqrt_dt = dtau.sqrt();
        let mut out = ens.states().clone();
        for (i, site) in self.sites.iter().enumerate() {
            let local = ens.rows(&site.states);
            let (sigma, diffusion) = match (&site.fixed_diffusion, cfg.diffusion) {
                (Some((s, d)), _) => (Some(s.clone()), Some(d.clone())),
                (None, DiffusionSpec::CurrentAnomalies { alpha }) if alpha > 0.0 => {
                    let s = local.anomalies()? * alpha;
                    let d = &s * s.transpose() * 0.5;
                    (Some(s), Some(d))
                }
                _ => (None, None),
            };
            let current = match cfg.metric {
                Metric::Identity => Some(fit(self.current_family, &local, &site.fit_options)?),
                Metric::Langevin => None,
            };
            let ctx = DriftContext {
                posterior: &site.posterior,
                current,
                sigma,
                diffusion,
                metric: cfg.metric,
                beta: cfg.regularization.beta,
            };
            let shared = shared_system(&ctx, &local, cfg, dtau)?;
            for e in 0..ens.n_ens() {
                let mut v = out[(i, e)] + drift_increment(&ctx, &local, e, cfg, dtau, shared.as_ref())?[site.pos];
                if let Some(s) = &ctx.sigma {
                    v += s.row(site.pos).transpose().dot(&noise[e]) * sqrt_dt;
                }
                out[(i, e)] = v;
            }
        }
        Ensemble::new(out)
    }
}

/// Localized VFP filter analysis.
pub fn local_vfp_analysis(
    background: &Ensemble,
    obs: &ObservationModel,
    spec: &MethodSpec,
    cfg: &FlowConfig,
    ctx: AnalysisContext<'_>,
) -> Result<CycleResult> {
    let mut stepper = LocalFlow::new(background, obs, spec, cfg, ctx.climatology_sqrt)?;
    let start = if spec.etkf_warm_start {
        etkf_analysis(background, &gaussian_surrogate(obs)?, 1.0)?
    } else {
        background.clone()
    };
    let out = flow_to_steady_state(start, &mut stepper, cfg, &[ctx.cycle])?;
    Ok(CycleResult { analysis: out.ensemble, flow_steps: out.steps, converged: out.converged })
}
