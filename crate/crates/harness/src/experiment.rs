//! Twin experiments: truth, synthetic observations and method runs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::Serialize;
use vfp_core::assimilate::{run_filter, vfp_filter_run, vfps_run, CyclingSetup, EtkfFilter, MethodSpec, SirFilter};
use vfp_core::densities::{ObsError, ObservationModel, ObservationOperator};
use vfp_core::dynamics::{propagate, ModelSystem, Trajectory};
use vfp_core::ensemble::Ensemble;
use vfp_core::flow::DiffusionSpec;
use vfp_core::linalg::sym_sqrt;
use vfp_core::metrics::{chi_square_uniform, MetricSeries};
use vfp_core::rng::{derive_seed, stream};
use vfp_core::StateVector;

use crate::config::{ClimatologyConfig, ExperimentConfig, MethodConfig, ObsErrorConfig, Seeds};
use crate::error::HarnessError;

/// Key of the observation and ensemble streams used for ETKF inflation tuning.
const TUNING_KEY: u64 = u64::MAX;

/// Truth trajectory at the assimilation times `0, Δt, …, cycles·Δt`, after
/// a burn-in from a perturbed reference state.
pub fn generate_truth(cfg: &ExperimentConfig) -> Result<Trajectory, HarnessError> {
    let model = cfg.model.build();
    let mut rng = stream(cfg.seeds.truth, &[]);
    let x0 = DVector::from_iterator(
        cfg.model.dimension(),
        cfg.model.reference_state().into_iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)),
    );
    let mut x = propagate(model.as_ref(), &x0, -cfg.truth_burn_in, 0.0, cfg.integrator)?;
    let times: Vec<f64> = (0..=cfg.cycles).map(|k| k as f64 * cfg.dt).collect();
    let mut states = vec![x.clone()];
    for w in times.windows(2) {
        x = propagate(model.as_ref(), &x, w[0], w[1], cfg.integrator)?;
        states.push(x.clone());
    }
    Ok(Trajectory::new(times, states)?)
}

/// One noise vector of the configured observation-error family.
pub fn observation_noise<R: Rng + ?Sized>(error: &ObsErrorConfig, n_obs: usize, rng: &mut R) -> DVector<f64> {
    match *error {
        ObsErrorConfig::Gaussian { variance } => {
            let sd = variance.sqrt();
            DVector::from_fn(n_obs, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
        }
        ObsErrorConfig::Cauchy { scale } => {
            let c = Cauchy::new(0.0, scale).expect("validated Cauchy scale");
            DVector::from_fn(n_obs, |_, _| c.sample(rng))
        }
    }
}

pub fn observation_operator(cfg: &ExperimentConfig) -> Result<ObservationOperator, HarnessError> {
    Ok(ObservationOperator::new(cfg.model.dimension(), cfg.observed_indices(), cfg.observation.transform)?)
}

/// Observed values `H(truth_k) + noise` for cycles `1..=cycles`, from the
/// noise stream identified by `key`.
pub fn generate_observation_values(
    cfg: &ExperimentConfig,
    truth: &Trajectory,
    key: u64,
) -> Result<Vec<DVector<f64>>, HarnessError> {
    let op = observation_operator(cfg)?;
    let mut rng = stream(cfg.seeds.obs_noise, &[key]);
    Ok(truth.states()[1..]
        .iter()
        .map(|x| op.apply(x) + observation_noise(&cfg.observation.error, op.n_obs(), &mut rng))
        .collect())
}

pub fn observation_error(cfg: &ExperimentConfig, n_obs: usize) -> Result<ObsError, HarnessError> {
    Ok(match cfg.observation.error {
        ObsErrorConfig::Gaussian { variance } => ObsError::gaussian_diagonal(&DVector::from_element(n_obs, variance))?,
        ObsErrorConfig::Cauchy { scale } => ObsError::cauchy(DVector::from_element(n_obs, scale))?,
    })
}

pub fn observation_models(
    cfg: &ExperimentConfig,
    values: Vec<DVector<f64>>,
) -> Result<Vec<ObservationModel>, HarnessError> {
    let op = observation_operator(cfg)?;
    let err = observation_error(cfg, op.n_obs())?;
    values.into_iter().map(|y| Ok(ObservationModel::new(op.clone(), err.clone(), y)?)).collect()
}

/// The shared truth and the observations of one repetition.
pub fn generate_truth_and_obs(
    cfg: &ExperimentConfig,
    repetition: u64,
) -> Result<(Trajectory, Vec<ObservationModel>), HarnessError> {
    let truth = generate_truth(cfg)?;
    let values = generate_observation_values(cfg, &truth, repetition)?;
    Ok((truth, observation_models(cfg, values)?))
}

/// `B^{1/2}` of the sample covariance of a long model run started at `x0`.
pub fn climatology_sqrt(
    model: &dyn ModelSystem,
    x0: &StateVector,
    clim: &ClimatologyConfig,
    cfg: &ExperimentConfig,
) -> Result<DMatrix<f64>, HarnessError> {
    let mut x = x0.clone();
    let mut samples = Vec::with_capacity(clim.samples);
    for _ in 0..clim.samples {
        x = propagate(model, &x, 0.0, clim.interval, cfg.integrator)?;
        samples.push(x.clone());
    }
    Ok(sym_sqrt(&Ensemble::from_members(&samples)?.covariance()?))
}

/// Truth at the first time plus independent `N(0, spread²)` perturbations.
pub fn initial_ensemble(cfg: &ExperimentConfig, x0: &StateVector, key: u64) -> Result<Ensemble, HarnessError> {
    let mut rng = stream(cfg.seeds.init, &[key]);
    let s = cfg.ensemble.spread;
    let states =
        DMatrix::from_fn(x0.len(), cfg.ensemble.n_ens, |i, _| x0[i] + s * rng.sample::<f64, _>(StandardNormal));
    Ok(Ensemble::new(states)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RepetitionSeeds {
    /// Key of the observation-noise and initial-ensemble streams.
    pub key: u64,
    pub flow: u64,
    pub ranks: u64,
}

impl RepetitionSeeds {
    pub fn new(seeds: &Seeds, key: u64) -> Self {
        Self { key, flow: derive_seed(seeds.flow, &[key, 0]), ranks: derive_seed(seeds.flow, &[key, 1]) }
    }
}

/// Everything one method run needs besides the observations.
pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub model: &'a dyn ModelSystem,
    pub truth: &'a Trajectory,
    pub climatology_sqrt: Option<&'a DMatrix<f64>>,
}

impl RunContext<'_> {
    /// Runs the configured method over the first `cycles` cycles.
    pub fn run(
        &self,
        obs: &[ObservationModel],
        ens0: Ensemble,
        seeds: RepetitionSeeds,
        cycles: usize,
        spinup: usize,
        inflation: Option<f64>,
    ) -> Result<MetricSeries, HarnessError> {
        let cfg = self.cfg;
        let setup = CyclingSetup {
            model: self.model,
            policy: cfg.integrator,
            times: &self.truth.times()[..=cycles],
            truth: &self.truth.states()[..=cycles],
            spinup,
            rank_component: cfg.rank_component,
            rank_seed: seeds.ranks,
        };
        let obs = &obs[..cycles];
        let series = match &cfg.method {
            MethodConfig::Vfp(spec) => {
                let mut flow = cfg.flow.clone();
                flow.rng_seed = seeds.flow;
                if spec.smoother.is_some() {
                    vfps_run(&setup, obs, ens0, spec, &flow, self.climatology_sqrt)?
                } else {
                    vfp_filter_run(&setup, obs, ens0, spec, &flow, self.climatology_sqrt)?
                }
            }
            MethodConfig::Etkf { inflation: fixed } => {
                let inflation = fixed.or(inflation).unwrap_or(1.0);
                run_filter(&setup, obs, ens0, &mut EtkfFilter { inflation })?
            }
            MethodConfig::Sir => run_filter(&setup, obs, ens0, &mut SirFilter { seed: seeds.flow })?,
        };
        Ok(series)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InflationTuning {
    /// `(inflation, RMSE)` for every grid value of the tuning run.
    pub grid: Vec<(f64, Option<f64>)>,
    pub chosen: f64,
}

/// Picks the ETKF inflation with the lowest RMSE on a separate tuning run.
pub fn tune_inflation(ctx: &RunContext<'_>) -> Result<InflationTuning, HarnessError> {
    let cfg = ctx.cfg;
    let cycles = cfg.etkf.tuning_cycles.min(cfg.cycles);
    let spinup = cfg.spinup.min(cycles / 2);
    let obs = observation_models(cfg, generate_observation_values(cfg, ctx.truth, TUNING_KEY)?)?;
    let seeds = RepetitionSeeds::new(&cfg.seeds, TUNING_KEY);
    let mut grid = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for &f in &cfg.etkf.inflation_grid {
        let ens0 = initial_ensemble(cfg, &ctx.truth.states()[0], TUNING_KEY)?;
        let series = ctx.run(&obs, ens0, seeds, cycles, spinup, Some(f))?;
        let rmse = series.rmse();
        let ok = series.failure.is_none() && rmse.is_finite();
        grid.push((f, ok.then_some(rmse)));
        if ok && best.is_none_or(|(_, r)| rmse < r) {
            best = Some((f, rmse));
        }
    }
    let chosen = best.map_or(cfg.etkf.inflation_grid[0], |(f, _)| f);
    Ok(InflationTuning { grid, chosen })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub seeds: RepetitionSeeds,
    pub cycles_completed: usize,
    /// Post-spinup RMSE; absent when no finite value is available.
    pub rmse: Option<f64>,
    pub max_instant_rmse: Option<f64>,
    pub mean_flow_steps: Option<f64>,
    pub converged_fraction: Option<f64>,
    pub rank_counts: Vec<u64>,
    pub failure: Option<String>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl RepetitionSummary {
    fn new(repetition: usize, seeds: RepetitionSeeds, series: &MetricSeries) -> Self {
        Self {
            repetition,
            seeds,
            cycles_completed: series.cycles(),
            rmse: finite(series.rmse()),
            max_instant_rmse: finite(series.max_instant_rmse()),
            mean_flow_steps: finite(series.mean_flow_steps()),
            converged_fraction: finite(series.converged_fraction()),
            rank_counts: series.rank_counts.clone(),
            failure: series.failure.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// At least one repetition stopped early.
    Partial,
}

/// The summary record written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub method: String,
    pub status: Status,
    /// Resolved configuration, including the seeds actually used.
    pub config: ExperimentConfig,
    pub mean_rmse: Option<f64>,
    pub rmse: Vec<Option<f64>>,
    pub mean_flow_steps: Option<f64>,
    pub converged_fraction: Option<f64>,
    /// Rank counts summed over repetitions.
    pub rank_counts: Vec<u64>,
    pub rank_chi_square: f64,
    pub etkf_inflation: Option<InflationTuning>,
    /// Set when a climatological covariance was sampled for diffusion.
    pub climatology: Option<ClimatologyConfig>,
    pub repetitions: Vec<RepetitionSummary>,
}

pub struct ExperimentResult {
    pub summary: Summary,
    pub series: Vec<MetricSeries>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<Vec<_>>>()?;
    finite(v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every repetition of the experiment. Repetitions share the truth and
/// draw fresh observation noise and initial ensembles.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let model = cfg.model.build();
    let truth = generate_truth(cfg)?;
    let needs_climatology = matches!(&cfg.method, MethodConfig::Vfp(_))
        && matches!(cfg.flow.diffusion, DiffusionSpec::Climatological { .. });
    let clim = if needs_climatology {
        // Sampled after the assimilation period so it does not reuse the truth.
        Some(climatology_sqrt(model.as_ref(), truth.last(), &cfg.climatology, cfg)?)
    } else {
        None
    };
    let ctx = RunContext { cfg, model: model.as_ref(), truth: &truth, climatology_sqrt: clim.as_ref() };
    let tuning = match cfg.method {
        MethodConfig::Etkf { inflation: None } => Some(tune_inflation(&ctx)?),
        _ => None,
    };

    let mut series = Vec::with_capacity(cfg.repetitions);
    let mut reps = Vec::with_capacity(cfg.repetitions);
    for r in 0..cfg.repetitions {
        let seeds = RepetitionSeeds::new(&cfg.seeds, r as u64);
        let obs = observation_models(cfg, generate_observation_values(cfg, &truth, r as u64)?)?;
        let ens0 = initial_ensemble(cfg, &truth.states()[0], r as u64)?;
        let s = ctx.run(&obs, ens0, seeds, cfg.cycles, cfg.spinup, tuning.as_ref().map(|t| t.chosen))?;
        reps.push(RepetitionSummary::new(r, seeds, &s));
        series.push(s);
    }

    let mut rank_counts = vec![0u64; cfg.ensemble.n_ens + 1];
    for s in &series {
        for (c, v) in rank_counts.iter_mut().zip(&s.rank_counts) {
            *c += v;
        }
    }
    let status = if reps.iter().any(|r| r.failure.is_some()) { Status::Partial } else { Status::Ok };
    let summary = Summary {
        name: cfg.name.clone(),
        method: cfg.method_name(),
        status,
        config: cfg.clone(),
        mean_rmse: mean(reps.iter().map(|r| r.rmse)),
        rmse: reps.iter().map(|r| r.rmse).collect(),
        mean_flow_steps: mean(reps.iter().map(|r| r.mean_flow_steps)),
        converged_fraction: mean(reps.iter().map(|r| r.converged_fraction)),
        rank_chi_square: chi_square_uniform(&rank_counts),
        rank_counts,
        etkf_inflation: tuning,
        climatology: needs_climatology.then_some(cfg.climatology),
        repetitions: reps,
    };
    Ok(ExperimentResult { summary, series })
}

/// Draws a `u64` seed from a configured seed and key path; exposed for tools
/// that need extra reproducible streams.
pub fn child_seed(seed: u64, keys: &[u64]) -> u64 {
    stream(seed, keys).next_u64()
}

/// The method spec of a VFP configuration.
pub fn vfp_spec(cfg: &ExperimentConfig) -> Option<&MethodSpec> {
    match &cfg.method {
        MethodConfig::Vfp(spec) => Some(spec),
        _ => None,
    }
}
