//! Reference methods: the ensemble transform Kalman filter and a
//! sequential importance resampling particle filter.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::densities::{ObsError, ObservationModel};
use crate::ensemble::Ensemble;
use crate::linalg::jitter_amount;
use crate::{Result, VfpError};

/// ETKF analysis with multiplicative inflation and the symmetric square-root
/// transform. Requires Gaussian observation errors.
pub fn etkf_analysis(background: &Ensemble, obs: &ObservationModel, inflation: f64) -> Result<Ensemble> {
    let r = match obs.error() {
        ObsError::Gaussian { factor, .. } => factor,
        ObsError::Cauchy { .. } => {
            return Err(VfpError::InvalidParameter("ETKF needs Gaussian observation errors".into()))
        }
    };
    if !(inflation >= 1.0) {
        return Err(VfpError::InvalidParameter(format!("inflation must be >= 1, got {inflation}")));
    }
    let n = background.n_ens();
    let scale = ((n - 1) as f64).sqrt();
    let xb = background.mean();
    let a = background.anomalies()? * inflation;

    // Inflated members mapped to observation space.
    let members: Vec<DVector<f64>> = (0..n).map(|e| &xb + a.column(e) * scale).collect();
    let hx: Vec<DVector<f64>> = members.iter().map(|x| obs.operator().apply(x)).collect();
    let hx = DMatrix::from_columns(&hx);
    let ybar = DVector::from_fn(hx.nrows(), |i, _| hx.row(i).mean());
    let mut s = hx;
    for mut c in s.column_iter_mut() {
        c -= &ybar;
        c /= scale;
    }

    let rinv_s = DMatrix::from_columns(&s.column_iter().map(|c| r.solve(&c.into_owned())).collect::<Vec<_>>());
    let mut m = s.transpose() * &rinv_s;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let m = crate::linalg::symmetrize(&m);
    let eig = SymmetricEigen::new(m);
    let floor = jitter_amount(&DMatrix::from_diagonal(&eig.eigenvalues));
    let lam = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let inv = v * DMatrix::from_diagonal(&lam.map(|l| 1.0 / l)) * v.transpose();
    let inv_sqrt = v * DMatrix::from_diagonal(&lam.map(|l| 1.0 / l.sqrt())) * v.transpose();

    let innovation = obs.value() - &ybar;
    let wbar = &inv * (rinv_s.transpose() * innovation);
    let xa = &xb + &a * wbar;
    let aa = &a * inv_sqrt;
    let mut out = aa * scale;
    for mut c in out.column_iter_mut() {
        c += &xa;
    }
    Ensemble::new(out)
}

/// Importance weights after multiplying by the observation likelihood,
/// normalized. The flag is set when every likelihood vanished, in which case
/// uniform weights are returned.
pub fn reweight(particles: &Ensemble, weights: &[f64], obs: &ObservationModel) -> Result<(Vec<f64>, bool)> {
    let n = particles.n_ens();
    if weights.len() != n {
        return Err(VfpError::DimensionMismatch { expected: n, got: weights.len() });
    }
    let logs: Vec<f64> = particles
        .states()
        .column_iter()
        .zip(weights)
        .map(|(x, &w)| w.ln() + obs.log_likelihood(&x.into_owned()))
        .collect();
    let peak = logs.iter().copied().filter(|l| !l.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Ok((vec![1.0 / n as f64; n], true));
    }
    let mut w: Vec<f64> = logs.iter().map(|&l| if l.is_nan() { 0.0 } else { (l - peak).exp() }).collect();
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    Ok((w, false))
}

/// Indices drawn by systematic resampling from normalized weights.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut j = 0;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while u > cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SirOutcome {
    pub particles: Ensemble,
    pub weights: Vec<f64>,
    /// All likelihoods were zero and the resampling was uniform.
    pub degenerate: bool,
    /// Effective sample size before resampling.
    pub ess: f64,
}

/// Reweights by the observation likelihood and resamples to uniform weights.
pub fn sir_step<R: Rng + ?Sized>(
    particles: &Ensemble,
    weights: &[f64],
    obs: &ObservationModel,
    rng: &mut R,
) -> Result<SirOutcome> {
    let (w, degenerate) = reweight(particles, weights, obs)?;
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let idx = systematic_resample(&w, rng);
    let states = particles.states().select_columns(&idx);
    let n = particles.n_ens();
    Ok(SirOutcome { particles: Ensemble::new(states)?, weights: vec![1.0 / n as f64; n], degenerate, ess })
}

/// Gaussian surrogate `R = diag(γ²)` for independent Cauchy errors; Gaussian
/// errors are returned unchanged.
pub fn gaussian_surrogate(obs: &ObservationModel) -> Result<ObservationModel> {
    let error = match obs.error() {
        ObsError::Gaussian { .. } => obs.error().clone(),
        ObsError::Cauchy { scales } => ObsError::gaussian_diagonal(&scales.map(|g| g * g))?,
    };
    ObservationModel::new(obs.operator().clone(), error, obs.value().clone())
}
