use nalgebra::DMatrix;

use super::local::local_vfp_analysis;
use super::method::MethodSpec;
use crate::baselines::{etkf_analysis, gaussian_surrogate, sir_step};
use crate::densities::{fit, ObservationModel};
use crate::dynamics::{propagate, ModelSystem, StepPolicy};
use crate::ensemble::Ensemble;
use crate::flow::{
    flow_to_steady_state, DiffusionSpec, FilterPosterior, FlowConfig, FlowProblem, GlobalFlow, Posterior,
};
use crate::metrics::MetricSeries;
use crate::rng::stream;
use crate::{Result, StateVector};

/// Outcome of one analysis step.
#[derive(Debug, Clone)]
pub struct CycleResult {
    pub analysis: Ensemble,
    pub flow_steps: usize,
    pub converged: bool,
}

/// Per-analysis inputs that are not part of the method or flow settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalysisContext<'a> {
    /// `B^{1/2}` for climatological diffusion.
    pub climatology_sqrt: Option<&'a DMatrix<f64>>,
    /// Identifies the analysis in noise keys (usually the cycle number).
    pub cycle: u64,
}

/// VFP filter analysis: fit the prior on the background and flow the
/// background to the posterior.
pub fn vfp_analysis(
    background: &Ensemble,
    obs: &ObservationModel,
    spec: &MethodSpec,
    cfg: &FlowConfig,
    ctx: AnalysisContext<'_>,
) -> Result<CycleResult> {
    spec.validate(background.n_state())?;
    if spec.is_localized() {
        return local_vfp_analysis(background, obs, spec, cfg, ctx);
    }
    let prior = fit(spec.prior, background, &spec.fit_options())?;
    let posterior = FilterPosterior::new(prior, obs.clone())?;
    let start = if spec.etkf_warm_start {
        etkf_analysis(background, &gaussian_surrogate(obs)?, 1.0)?
    } else {
        background.clone()
    };
    global_flow(background, start, &posterior, spec, cfg, ctx)
}

/// Runs the global flow from `start` towards `posterior`; `background`
/// supplies the background anomalies for diffusion.
pub(super) fn global_flow(
    background: &Ensemble,
    start: Ensemble,
    posterior: &dyn Posterior,
    spec: &MethodSpec,
    cfg: &FlowConfig,
    ctx: AnalysisContext<'_>,
) -> Result<CycleResult> {
    let background_anomalies = match cfg.diffusion {
        DiffusionSpec::BackgroundAnomalies { .. } => Some(background.anomalies()?),
        _ => None,
    };
    let problem = FlowProblem {
        posterior,
        current_family: spec.current,
        fit_options: spec.fit_options(),
        background_anomalies,
        climatology_sqrt: ctx.climatology_sqrt.cloned(),
    };
    let mut stepper = GlobalFlow { problem, cfg };
    let out = flow_to_steady_state(start, &mut stepper, cfg, &[ctx.cycle])?;
    Ok(CycleResult { analysis: out.ensemble, flow_steps: out.steps, converged: out.converged })
}

/// A filter analysis scheme usable by [`run_filter`].
pub trait AnalysisMethod {
    fn analyse(&mut self, background: &Ensemble, obs: &ObservationModel, cycle: usize) -> Result<CycleResult>;
}

pub struct VfpFilter<'a> {
    pub spec: MethodSpec,
    pub cfg: FlowConfig,
    pub climatology_sqrt: Option<&'a DMatrix<f64>>,
}

impl AnalysisMethod for VfpFilter<'_> {
    fn analyse(&mut self, background: &Ensemble, obs: &ObservationModel, cycle: usize) -> Result<CycleResult> {
        let ctx = AnalysisContext { climatology_sqrt: self.climatology_sqrt, cycle: cycle as u64 };
        vfp_analysis(background, obs, &self.spec, &self.cfg, ctx)
    }
}

/// ETKF with a Gaussian surrogate for non-Gaussian observation errors.
pub struct EtkfFilter {
    pub inflation: f64,
}

impl AnalysisMethod for EtkfFilter {
    fn analyse(&mut self, background: &Ensemble, obs: &ObservationModel, _: usize) -> Result<CycleResult> {
        let analysis = etkf_analysis(background, &gaussian_surrogate(obs)?, self.inflation)?;
        Ok(CycleResult { analysis, flow_steps: 0, converged: true })
    }
}

pub struct SirFilter {
    pub seed: u64,
}

impl AnalysisMethod for SirFilter {
    fn analyse(&mut self, background: &Ensemble, obs: &ObservationModel, cycle: usize) -> Result<CycleResult> {
        let n = background.n_ens();
        let mut rng = stream(self.seed, &[cycle as u64]);
        let out = sir_step(background, &vec![1.0 / n as f64; n], obs, &mut rng)?;
        Ok(CycleResult { analysis: out.particles, flow_steps: 0, converged: !out.degenerate })
    }
}

/// Shared setting of a twin experiment run.
///
/// `times` and `truth` start at the initial time, so they hold one entry more
/// than there are observations; observation `k` belongs to `times[k + 1]`.
pub struct CyclingSetup<'a> {
    pub model: &'a dyn ModelSystem,
    pub policy: StepPolicy,
    pub times: &'a [f64],
    pub truth: &'a [StateVector],
    pub spinup: usize,
    pub rank_component: usize,
    pub rank_seed: u64,
}

impl CyclingSetup<'_> {
    pub fn cycles(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub(super) fn forecast(&self, ens: &Ensemble, cycle: usize) -> Result<Ensemble> {
        let (t0, t1) = (self.times[cycle - 1], self.times[cycle]);
        let members: Vec<StateVector> =
            ens.members().map(|x| propagate(self.model, &x, t0, t1, self.policy)).collect::<Result<_>>()?;
        Ensemble::from_members(&members)
    }

    pub(super) fn check(&self, obs: &[ObservationModel]) -> Result<()> {
        use crate::VfpError;
        if self.truth.len() != self.times.len() {
            return Err(VfpError::DimensionMismatch { expected: self.times.len(), got: self.truth.len() });
        }
        if obs.len() != self.cycles() {
            return Err(VfpError::DimensionMismatch { expected: self.cycles(), got: obs.len() });
        }
        Ok(())
    }
}

/// Forecast-analysis cycling. Failures during a cycle end the run early and
/// are reported in [`MetricSeries::failure`].
pub fn run_filter(
    setup: &CyclingSetup<'_>,
    obs: &[ObservationModel],
    ens0: Ensemble,
    method: &mut dyn AnalysisMethod,
) -> Result<MetricSeries> {
    setup.check(obs)?;
    let mut series = MetricSeries::new(ens0.n_ens(), setup.rank_component, setup.spinup);
    let mut rng = stream(setup.rank_seed, &[]);
    let mut ens = ens0;
    for k in 1..=setup.cycles() {
        let step = setup.forecast(&ens, k).and_then(|bg| method.analyse(&bg, &obs[k - 1], k));
        match step {
            Ok(res) => {
                series.record(&res.analysis, &setup.truth[k], res.flow_steps, res.converged, &mut rng);
                ens = res.analysis;
            }
            Err(err) => {
                series.failure = Some(format!("cycle {k}: {err}"));
                break;
            }
        }
    }
    Ok(series)
}

/// [`run_filter`] with the VFP analysis.
pub fn vfp_filter_run(
    setup: &CyclingSetup<'_>,
    obs: &[ObservationModel],
    ens0: Ensemble,
    spec: &MethodSpec,
    cfg: &FlowConfig,
    climatology_sqrt: Option<&DMatrix<f64>>,
) -> Result<MetricSeries> {
    spec.validate(ens0.n_state())?;
    cfg.validate()?;
    let mut method = VfpFilter { spec: spec.clone(), cfg: cfg.clone(), climatology_sqrt };
    run_filter(setup, obs, ens0, &mut method)
}
