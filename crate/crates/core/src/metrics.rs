//! Verification metrics: spatio-temporal RMSE and rank histograms.

use rand::Rng;

use crate::dynamics::Trajectory;
use crate::ensemble::Ensemble;
use crate::{Result, StateVector, VfpError};

/// `sqrt( Σ_k ‖truth_k − mean_k‖² / (K N_state) )` over the cycles after `spinup`.
pub fn rmse(truth: &Trajectory, means: &[StateVector], spinup: usize) -> Result<f64> {
    rmse_of(truth.states(), means, spinup)
}

/// [`rmse`] on plain state lists.
pub fn rmse_of(truth: &[StateVector], means: &[StateVector], spinup: usize) -> Result<f64> {
    if truth.len() != means.len() {
        return Err(VfpError::DimensionMismatch { expected: truth.len(), got: means.len() });
    }
    if spinup >= truth.len() {
        return Err(VfpError::InvalidParameter(format!("spinup {spinup} leaves no cycles out of {}", truth.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, m) in truth.iter().zip(means).skip(spinup) {
        if t.len() != m.len() {
            return Err(VfpError::DimensionMismatch { expected: t.len(), got: m.len() });
        }
        sum += (t - m).norm_squared();
        count += t.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// Per-cycle `‖truth − mean‖ / √N_state`.
pub fn instant_rmse(truth: &StateVector, mean: &StateVector) -> f64 {
    ((truth - mean).norm_squared() / truth.len() as f64).sqrt()
}

/// Number of members strictly below `truth`, plus a uniformly random share
/// of the members equal to it.
pub fn rank_of<R: Rng + ?Sized>(members: impl Iterator<Item = f64>, truth: f64, rng: &mut R) -> usize {
    let (mut below, mut equal) = (0usize, 0usize);
    for v in members {
        if v < truth {
            below += 1;
        } else if v == truth {
            equal += 1;
        }
    }
    below + if equal > 0 { rng.random_range(0..=equal) } else { 0 }
}

/// Rank histogram of `truth[component]` within the ensembles, after `spinup`.
pub fn rank_histogram<R: Rng + ?Sized>(
    ensembles: &[Ensemble],
    truth: &[StateVector],
    component: usize,
    spinup: usize,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if ensembles.len() != truth.len() {
        return Err(VfpError::DimensionMismatch { expected: truth.len(), got: ensembles.len() });
    }
    let n_ens = ensembles.first().map_or(0, |e| e.n_ens());
    let mut counts = vec![0u64; n_ens + 1];
    for (ens, t) in ensembles.iter().zip(truth).skip(spinup) {
        if ens.n_ens() != n_ens {
            return Err(VfpError::DimensionMismatch { expected: n_ens, got: ens.n_ens() });
        }
        counts[rank_of(ens.states().row(component).iter().copied(), t[component], rng)] += 1;
    }
    Ok(counts)
}

/// Pearson chi-square distance of a histogram from the uniform one.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Everything recorded while cycling a filter or smoother.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricSeries {
    pub means: Vec<StateVector>,
    pub rmse_instant: Vec<f64>,
    pub flow_steps: Vec<usize>,
    pub converged: Vec<bool>,
    pub rank_counts: Vec<u64>,
    pub rank_component: usize,
    pub spinup: usize,
    /// Set when the run stopped early; the series then covers the completed cycles.
    pub failure: Option<String>,
}

impl MetricSeries {
    pub fn new(n_ens: usize, rank_component: usize, spinup: usize) -> Self {
        Self { rank_counts: vec![0; n_ens + 1], rank_component, spinup, ..Self::default() }
    }

    pub fn cycles(&self) -> usize {
        self.means.len()
    }

    /// Adds one cycle. Rank data are collected only after spinup.
    pub fn record<R: Rng + ?Sized>(
        &mut self,
        ens: &Ensemble,
        truth: &StateVector,
        flow_steps: usize,
        converged: bool,
        rng: &mut R,
    ) {
        let mean = ens.mean();
        self.rmse_instant.push(instant_rmse(truth, &mean));
        self.means.push(mean);
        self.flow_steps.push(flow_steps);
        self.converged.push(converged);
        if self.means.len() > self.spinup {
            let c = self.rank_component;
            self.rank_counts[rank_of(ens.states().row(c).iter().copied(), truth[c], rng)] += 1;
        }
    }

    /// Post-spinup spatio-temporal RMSE; `NaN` when no cycle follows the spinup.
    pub fn rmse(&self) -> f64 {
        let tail = &self.rmse_instant[self.spinup.min(self.rmse_instant.len())..];
        if tail.is_empty() {
            return f64::NAN;
        }
        (tail.iter().map(|r| r * r).sum::<f64>() / tail.len() as f64).sqrt()
    }

    /// Largest per-cycle RMSE over the whole run, `∞` if any was non-finite.
    pub fn max_instant_rmse(&self) -> f64 {
        self.rmse_instant.iter().fold(0.0, |m, &r| if r.is_finite() { m.max(r) } else { f64::INFINITY })
    }

    pub fn converged_fraction(&self) -> f64 {
        if self.converged.is_empty() {
            return f64::NAN;
        }
        self.converged.iter().filter(|&&c| c).count() as f64 / self.converged.len() as f64
    }

    pub fn mean_flow_steps(&self) -> f64 {
        if self.flow_steps.is_empty() {
            return f64::NAN;
        }
        self.flow_steps.iter().sum::<usize>() as f64 / self.flow_steps.len() as f64
    }
}
