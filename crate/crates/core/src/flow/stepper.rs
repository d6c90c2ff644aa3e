use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::config::{FlowConfig, Metric, SolverSpec};
use super::drift::{diffusion_apply, particle_drift, DriftContext, FlowProblem};
use super::gmres::gmres;
use crate::ensemble::Ensemble;
use crate::linalg::{negative_part, symmetrize};
use crate::rng::{standard_normal_vector, stream};
use crate::{Result, StateVector, VfpError};

/// Result of driving an ensemble to (approximate) steady state.
#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub ensemble: Ensemble,
    /// Accepted pseudo-time steps.
    pub steps: usize,
    pub rejections: usize,
    pub converged: bool,
    pub final_dtau: f64,
}

/// One pseudo-time step of some particle flow.
pub trait FlowStepper {
    /// Advances `ens` by `dtau`. `keys` identify the step for noise generation.
    fn propose(&mut self, ens: &Ensemble, dtau: f64, keys: &[u64]) -> Result<Ensemble>;
}

/// `x + Δτ (I − Δτ J)⁻¹ F + noise`, where `noise` is `√Δτ σ ξ`.
pub fn rem_update(
    x: &DVector<f64>,
    drift: &DVector<f64>,
    jacobian: Option<&DMatrix<f64>>,
    dtau: f64,
    noise: Option<&DVector<f64>>,
) -> Result<StateVector> {
    let step = match jacobian {
        Some(j) => {
            implicit_matrix(j, dtau).solve(drift).ok_or_else(|| VfpError::LinearSolve("singular REM matrix".into()))?
        }
        None => drift.clone(),
    };
    let mut out = x + step * dtau;
    if let Some(n) = noise {
        out += n;
    }
    Ok(out)
}

fn implicit_matrix(j: &DMatrix<f64>, dtau: f64) -> LU<f64, Dyn, Dyn> {
    let n = j.nrows();
    (DMatrix::identity(n, n) - j * dtau).lu()
}

/// Per-particle Jacobian approximation used by [`SolverSpec::BlockAnalytic`].
pub fn block_jacobian(ctx: &DriftContext<'_>, x: &DVector<f64>, current_hessian: bool) -> Result<DMatrix<f64>> {
    let h = negative_part(&symmetrize(&ctx.posterior.hessian(x)?));
    Ok(match ctx.metric {
        Metric::Langevin => ctx.metric_matrix() * h,
        Metric::Identity if current_hessian => {
            let n = x.len();
            let q = ctx.current.as_ref().expect("identity metric needs the current density fit");
            let mut coef = -DMatrix::<f64>::identity(n, n);
            if let Some(d) = &ctx.diffusion {
                coef += d;
            }
            negative_part(&symmetrize(&(h + coef * q.hessian_log_density(x))))
        }
        Metric::Identity => h,
    })
}

/// Standard normal noise for particle `e` of the step identified by `keys`.
pub fn particle_noise(seed: u64, keys: &[u64], e: usize, dim: usize) -> DVector<f64> {
    let mut k = keys.to_vec();
    k.push(e as u64);
    standard_normal_vector(&mut stream(seed, &k), dim)
}

/// `(I − Δτ J)` factored once for all particles, when the Jacobian is
/// shared by the ensemble.
pub fn shared_system(
    ctx: &DriftContext<'_>,
    ens: &Ensemble,
    cfg: &FlowConfig,
    dtau: f64,
) -> Result<Option<LU<f64, Dyn, Dyn>>> {
    Ok(match cfg.solver {
        SolverSpec::BlockAnalytic { current_hessian }
            if ctx.posterior.hessian_is_shared()
                && (!current_hessian || ctx.current.as_ref().is_none_or(|q| q.constant_hessian().is_some())) =>
        {
            Some(implicit_matrix(&block_jacobian(ctx, &ens.mean(), current_hessian)?, dtau))
        }
        _ => None,
    })
}

/// Deterministic part `Δτ (I − Δτ J)⁻¹ F` of the REM increment of particle `e`.
pub fn drift_increment(
    ctx: &DriftContext<'_>,
    ens: &Ensemble,
    e: usize,
    cfg: &FlowConfig,
    dtau: f64,
    shared: Option<&LU<f64, Dyn, Dyn>>,
) -> Result<StateVector> {
    let x = ens.member(e).into_owned();
    let f = particle_drift(ctx, ens, e, &x)?;
    let step = match (cfg.solver, shared) {
        (SolverSpec::Explicit, _) => f,
        (SolverSpec::BlockAnalytic { .. }, Some(lu)) => lu.solve(&f).ok_or_else(singular)?,
        (SolverSpec::BlockAnalytic { current_hessian }, None) => {
            implicit_matrix(&block_jacobian(ctx, &x, current_hessian)?, dtau).solve(&f).ok_or_else(singular)?
        }
        (SolverSpec::FdJvpGmres { tol, max_iter }, _) => {
            let xn = x.norm();
            let jvp_system = |v: &DVector<f64>| -> Result<DVector<f64>> {
                let h = f64::EPSILON.sqrt() * (1.0 + xn) / v.norm().max(f64::MIN_POSITIVE);
                let fv = particle_drift(ctx, ens, e, &(&x + v * h))?;
                Ok(v - (fv - &f) * (dtau / h))
            };
            gmres(jvp_system, &f, tol, max_iter)?.0
        }
    };
    Ok(step * dtau)
}

/// One Rosenbrock-Euler-Maruyama step of every particle.
pub fn rem_step(ens: &Ensemble, ctx: &DriftContext<'_>, cfg: &FlowConfig, dtau: f64, keys: &[u64]) -> Result<Ensemble> {
    let n = ens.n_state();
    let shared = shared_system(ctx, ens, cfg, dtau)?;
    let sqrt_dt = dtau.sqrt();
    let mut out = DMatrix::zeros(n, ens.n_ens());
    for e in 0..ens.n_ens() {
        let mut xe = ens.member(e) + drift_increment(ctx, ens, e, cfg, dtau, shared.as_ref())?;
        if let Some(sigma) = &ctx.sigma {
            let xi = particle_noise(cfg.rng_seed, keys, e, sigma.ncols());
            xe += diffusion_apply(Some(sigma), &xi, n) * sqrt_dt;
        }
        out.set_column(e, &xe);
    }
    Ensemble::new(out)
}

fn singular() -> VfpError {
    VfpError::LinearSolve("singular REM matrix".into())
}

/// [`FlowStepper`] for a global (non-localized) flow towards a [`Posterior`].
///
/// [`Posterior`]: super::Posterior
pub struct GlobalFlow<'a> {
    pub problem: FlowProblem<'a>,
    pub cfg: &'a FlowConfig,
}

impl FlowStepper for GlobalFlow<'_> {
    fn propose(&mut self, ens: &Ensemble, dtau: f64, keys: &[u64]) -> Result<Ensemble> {
        let ctx = DriftContext::new(&self.problem, ens, self.cfg)?;
        rem_step(ens, &ctx, self.cfg, dtau, keys)
    }
}

/// Errors after which a step is retried with a smaller `Δτ`.
fn is_recoverable(err: &VfpError) -> bool {
    matches!(
        err,
        VfpError::NonFinite(_) | VfpError::LinearSolve(_) | VfpError::NotPositiveDefinite | VfpError::Singular { .. }
    )
}

/// Iterates `stepper` until `‖x̄_{τ+Δτ} − x̄_τ‖ < ε Δτ`, the accepted-step
/// budget runs out, or `Δτ` underflows. Only the first case reports
/// convergence; the others still return the last accepted ensemble.
pub fn flow_to_steady_state(
    ens0: Ensemble,
    stepper: &mut dyn FlowStepper,
    cfg: &FlowConfig,
    keys: &[u64],
) -> Result<FlowOutcome> {
    cfg.validate()?;
    let sc = &cfg.step;
    let mut ens = ens0;
    let mut mean = ens.mean();
    let mut dtau = sc.dtau0;
    let (mut steps, mut rejections) = (0usize, 0usize);
    let mut step_keys = keys.to_vec();
    step_keys.push(0);
    let last = step_keys.len() - 1;
    for attempt in 0u64.. {
        step_keys[last] = attempt;
        match stepper.propose(&ens, dtau, &step_keys) {
            Ok(next) => {
                steps += 1;
                let next_mean = next.mean();
                let moved = (&next_mean - &mean).norm();
                ens = next;
                mean = next_mean;
                if moved < cfg.termination.epsilon * dtau {
                    return Ok(FlowOutcome { ensemble: ens, steps, rejections, converged: true, final_dtau: dtau });
                }
                if steps >= sc.max_steps {
                    break;
                }
                dtau = (dtau * sc.growth_factor).min(sc.max_dtau);
            }
            Err(err) if is_recoverable(&err) => {
                rejections += 1;
                dtau *= sc.shrink_factor;
                if dtau < sc.min_dtau || rejections > sc.max_rejections {
                    break;
                }
            }
            Err(err) => return Err(err),
        }
    }
    Ok(FlowOutcome { ensemble: ens, steps, rejections, converged: false, final_dtau: dtau })
}
