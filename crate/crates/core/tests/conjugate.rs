//! Linear-Gaussian problems, where the exact posterior is the Kalman update.

mod common;

use common::{normal_matrix, spd_matrix};
use nalgebra::{DMatrix, DVector};
use vfp_core::assimilate::{vfp_analysis, AnalysisContext, MethodSpec};
use vfp_core::baselines::{etkf_analysis, sir_step};
use vfp_core::densities::{DensityModel, ObsError, ObservationModel, ObservationOperator};
use vfp_core::ensemble::Ensemble;
use vfp_core::flow::{optimal_drift, DriftContext, FilterPosterior, FlowConfig, Metric};
use vfp_core::rng::stream;

struct Problem {
    mb: DVector<f64>,
    pb: DMatrix<f64>,
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    y: DVector<f64>,
    obs: ObservationModel,
}

impl Problem {
    /// Observes the components `indices` with covariance `r`.
    fn new(mb: DVector<f64>, pb: DMatrix<f64>, indices: Vec<usize>, r: DMatrix<f64>, y: DVector<f64>) -> Self {
        let n = mb.len();
        let h = DMatrix::from_fn(indices.len(), n, |k, j| if indices[k] == j { 1.0 } else { 0.0 });
        let op = ObservationOperator::new(n, indices, Default::default()).unwrap();
        let obs = ObservationModel::new(op, ObsError::gaussian(r.clone()).unwrap(), y.clone()).unwrap();
        Self { mb, pb, h, r, y, obs }
    }

    fn scalar() -> Self {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(DVector::from_element(1, 1.0), one(2.0), vec![0], one(0.5), DVector::from_element(1, 2.5))
    }

    fn three_variable() -> Self {
        let mut rng = stream(21, &[]);
        let pb = spd_matrix(&mut rng, 3) * 2.0;
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]);
        Self::new(DVector::from_vec(vec![0.5, -1.0, 2.0]), pb, vec![0, 2], r, DVector::from_vec(vec![1.5, 1.0]))
    }

    fn kalman(&self, mb: &DVector<f64>, pb: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let s = &self.h * pb * self.h.transpose() + &self.r;
        let k = pb * self.h.transpose() * s.try_inverse().unwrap();
        let ma = mb + &k * (&self.y - &self.h * mb);
        let n = mb.len();
        let pa = (DMatrix::identity(n, n) - &k * &self.h) * pb;
        (ma, (&pa + pa.transpose()) * 0.5)
    }

    fn sample(&self, n_ens: usize, seed: u64) -> Ensemble {
        let l = self.pb.clone().cholesky().unwrap().l();
        let z = normal_matrix(&mut stream(seed, &[]), self.mb.len(), n_ens);
        let mut x = l * z;
        for mut c in x.column_iter_mut() {
            c += &self.mb;
        }
        Ensemble::new(x).unwrap()
    }
}

fn check_flow(p: &Problem, seed: u64) {
    let n_ens = 1000;
    let bg = p.sample(n_ens, seed);
    let cfg = FlowConfig::default();
    let res = vfp_analysis(&bg, &p.obs, &MethodSpec::gaussian(), &cfg, AnalysisContext::default()).unwrap();
    assert!(res.converged, "flow did not converge in {} steps", res.flow_steps);
    let (ma, pa) = p.kalman(&p.mb, &p.pb);
    let mean = res.analysis.mean();
    for i in 0..mean.len() {
        let se = (pa[(i, i)] / n_ens as f64).sqrt();
        assert!((mean[i] - ma[i]).abs() < 3.0 * se, "component {i}: {} vs {}", mean[i], ma[i]);
    }
    let cov = res.analysis.covariance().unwrap();
    let rel = (&cov - &pa).norm() / pa.norm();
    assert!(rel < 0.15, "covariance off by {rel}");
}

#[test]
fn deterministic_flow_reaches_scalar_kalman_posterior() {
    check_flow(&Problem::scalar(), 1);
}

#[test]
fn deterministic_flow_reaches_three_variable_kalman_posterior() {
    check_flow(&Problem::three_variable(), 2);
}

#[test]
fn flow_matches_kalman_update_of_sample_statistics() {
    // Without sampling error left in the oracle, only the flow's stopping
    // tolerance remains.
    let p = Problem::three_variable();
    let bg = p.sample(200, 3);
    let res =
        vfp_analysis(&bg, &p.obs, &MethodSpec::gaussian(), &FlowConfig::default(), AnalysisContext::default()).unwrap();
    let (ma, pa) = p.kalman(&bg.mean(), &bg.covariance().unwrap());
    assert!((res.analysis.mean() - ma).amax() < 0.02);
    assert!((res.analysis.covariance().unwrap() - &pa).norm() / pa.norm() < 0.02);
}

#[test]
fn drift_vanishes_at_exact_posterior() {
    for p in [Problem::scalar(), Problem::three_variable()] {
        let (ma, pa) = p.kalman(&p.mb, &p.pb);
        let prior = DensityModel::gaussian(p.mb.clone(), p.pb.clone()).unwrap();
        let posterior = FilterPosterior::new(prior, p.obs.clone()).unwrap();
        let ctx = DriftContext {
            posterior: &posterior,
            current: Some(DensityModel::gaussian(ma.clone(), pa.clone()).unwrap()),
            sigma: None,
            diffusion: None,
            metric: Metric::Identity,
            beta: 0.0,
        };
        let ens = p.sample(20, 4);
        for x in ens.members() {
            let f = optimal_drift(&ctx, &x).unwrap();
            assert!(f.amax() < 1e-8, "drift {}", f.amax());
        }
    }
}

#[test]
fn etkf_matches_kalman_on_sample_statistics() {
    let p = Problem::scalar();
    let bg = p.sample(30, 5);
    let xa = etkf_analysis(&bg, &p.obs, 1.0).unwrap();
    let (ma, pa) = p.kalman(&bg.mean(), &bg.covariance().unwrap());
    assert!((xa.mean()[0] - ma[0]).abs() < 1e-10);
    assert!((xa.covariance().unwrap()[(0, 0)] - pa[(0, 0)]).abs() < 1e-10);
}

#[test]
fn sir_recovers_kalman_mean() {
    let p = Problem::scalar();
    let n = 10_000;
    let bg = p.sample(n, 6);
    let out = sir_step(&bg, &vec![1.0 / n as f64; n], &p.obs, &mut stream(7, &[])).unwrap();
    let (ma, pa) = p.kalman(&p.mb, &p.pb);
    let se = (pa[(0, 0)] / out.ess).sqrt();
    assert!(!out.degenerate);
    assert!((out.particles.mean()[0] - ma[0]).abs() < 3.0 * se);
}
