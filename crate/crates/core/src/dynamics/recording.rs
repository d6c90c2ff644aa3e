use nalgebra::{DMatrix, DVector};

use super::integrator::{run, StepPolicy, A, B, C};
use super::ModelSystem;
use crate::{Result, StateVector, VfpError};

struct RecordedStep {
    t: f64,
    h: f64,
    stages: Vec<DVector<f64>>,
}

/// A forward run with every Runge-Kutta stage stored, the checkpoint from
/// which tangent-linear and adjoint sweeps are taken.
pub struct Recording {
    steps: Vec<RecordedStep>,
    initial: StateVector,
    final_state: StateVector,
}

/// Runs the model forward and stores all stages.
pub fn record(model: &dyn ModelSystem, x0: &StateVector, t0: f64, t1: f64, policy: StepPolicy) -> Result<Recording> {
    let mut steps = Vec::new();
    let final_state = run(
        model,
        x0,
        t0,
        t1,
        policy,
        |t, h, _x, st, _next| {
            let st = st.expect("stages requested");
            steps.push(RecordedStep { t, h, stages: st.stages });
        },
        true,
    )?;
    Ok(Recording { steps, initial: x0.clone(), final_state })
}

impl Recording {
    pub fn initial_state(&self) -> &StateVector {
        &self.initial
    }

    pub fn final_state(&self) -> &StateVector {
        &self.final_state
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Directional derivative of the discrete flow map applied to `v`.
    pub fn tangent_linear(&self, model: &dyn ModelSystem, v: &DVector<f64>) -> DVector<f64> {
        let mut dx = v.clone();
        let mut dk: Vec<DVector<f64>> = Vec::with_capacity(6);
        for step in &self.steps {
            dk.clear();
            for i in 0..6 {
                let mut dy = dx.clone();
                for (j, k) in dk.iter().enumerate() {
                    if A[i][j] != 0.0 {
                        dy.axpy(step.h * A[i][j], k, 1.0);
                    }
                }
                dk.push(model.jvp(step.t + C[i] * step.h, &step.stages[i], &dy));
            }
            for (b, k) in B.iter().zip(&dk) {
                if *b != 0.0 {
                    dx.axpy(step.h * b, k, 1.0);
                }
            }
        }
        dx
    }

    /// Tangent-linear map applied to every column of `m`.
    pub fn tangent_linear_matrix(&self, model: &dyn ModelSystem, m: &DMatrix<f64>) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = m.column_iter().map(|c| self.tangent_linear(model, &c.into_owned())).collect();
        DMatrix::from_columns(&cols)
    }

    /// Transposed tangent-linear map applied to `w`, by reverse sweep over
    /// the stored stages.
    pub fn adjoint(&self, model: &dyn ModelSystem, w: &DVector<f64>) -> DVector<f64> {
        let mut lambda = w.clone();
        let mut mu: Vec<DVector<f64>> = vec![DVector::zeros(w.len()); 6];
        for step in self.steps.iter().rev() {
            let h = step.h;
            for i in (0..6).rev() {
                let mut nu = &lambda * (h * B[i]);
                for j in (i + 1)..6 {
                    if A[j][i] != 0.0 {
                        nu.axpy(h * A[j][i], &mu[j], 1.0);
                    }
                }
                mu[i] = model.vjp(step.t + C[i] * h, &step.stages[i], &nu);
            }
            for m in &mu {
                lambda += m;
            }
        }
        lambda
    }
}

pub fn tangent_linear(
    model: &dyn ModelSystem,
    x0: &StateVector,
    t0: f64,
    t1: f64,
    policy: StepPolicy,
    v: &StateVector,
) -> Result<StateVector> {
    check_dim(model, v)?;
    Ok(record(model, x0, t0, t1, policy)?.tangent_linear(model, v))
}

/// `M*ᵀ w`: the adjoint of the discrete flow map from `t0` to `t1`.
pub fn discrete_adjoint(
    model: &dyn ModelSystem,
    x0: &StateVector,
    t0: f64,
    t1: f64,
    policy: StepPolicy,
    w: &StateVector,
) -> Result<StateVector> {
    check_dim(model, w)?;
    Ok(record(model, x0, t0, t1, policy)?.adjoint(model, w))
}

fn check_dim(model: &dyn ModelSystem, v: &StateVector) -> Result<()> {
    if v.len() != model.dimension() {
        return Err(VfpError::DimensionMismatch { expected: model.dimension(), got: v.len() });
    }
    Ok(())
}

/// Forward run through a sequence of observation times with one recording
/// per interval.
pub struct WindowRecord {
    segments: Vec<Recording>,
    states: Vec<StateVector>,
}

impl WindowRecord {
    pub fn new(model: &dyn ModelSystem, x0: &StateVector, times: &[f64], policy: StepPolicy) -> Result<Self> {
        if times.is_empty() {
            return Err(VfpError::InvalidParameter("window needs at least one time".into()));
        }
        let mut states = vec![x0.clone()];
        let mut segments = Vec::with_capacity(times.len() - 1);
        for w in times.windows(2) {
            let rec = record(model, states.last().unwrap(), w[0], w[1], policy)?;
            states.push(rec.final_state().clone());
            segments.push(rec);
        }
        Ok(Self { segments, states })
    }

    /// Model states `M_{0,i}(x0)` at every window time.
    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    /// `Σ_i M*_{0,i} g_i`, accumulated in a single backward sweep.
    pub fn adjoint_sum(&self, model: &dyn ModelSystem, forcings: &[StateVector]) -> StateVector {
        assert_eq!(forcings.len(), self.states.len(), "one forcing per window time");
        let mut lambda = forcings.last().unwrap().clone();
        for (seg, g) in self.segments.iter().zip(forcings.iter()).rev() {
            lambda = seg.adjoint(model, &lambda);
            lambda += g;
        }
        lambda
    }

    /// Tangent-linear maps `M_{0,i}` applied to the columns of `m`, one per time.
    pub fn tangent_linear_matrices(&self, model: &dyn ModelSystem, m: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut out = vec![m.clone()];
        for seg in &self.segments {
            let next = seg.tangent_linear_matrix(model, out.last().unwrap());
            out.push(next);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearModel, Lorenz96};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_inputs_map_to_zero() {
        let m = Lorenz96::new(10, 8.0);
        let x0 = DVector::from_fn(10, |i, _| 8.0 + (i as f64).sin());
        let z = DVector::zeros(10);
        let p = StepPolicy::default();
        assert_eq!(tangent_linear(&m, &x0, 0.0, 0.1, p, &z).unwrap(), z);
        assert_eq!(discrete_adjoint(&m, &x0, 0.0, 0.1, p, &z).unwrap(), z);
    }

    #[test]
    fn window_adjoint_sum_matches_segment_sweeps() {
        let m = Lorenz96::new(8, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = DVector::from_fn(8, |_, _| rng.random_range(-3.0..8.0));
        let times = [0.0, 0.05, 0.1];
        let p = StepPolicy::default();
        let w = WindowRecord::new(&m, &x0, &times, p).unwrap();
        let g: Vec<_> = (0..3).map(|_| random_vec(&mut rng, 8)).collect();
        let got = w.adjoint_sum(&m, &g);
        let mut expect = g[0].clone();
        expect += discrete_adjoint(&m, &x0, 0.0, 0.05, p, &g[1]).unwrap();
        expect += discrete_adjoint(&m, &x0, 0.0, 0.1, p, &g[2]).unwrap();
        assert!((got - expect).amax() < 1e-12);
    }

    #[test]
    fn linear_model_adjoint_is_transpose() {
        let a = DMatrix::from_row_slice(3, 3, &[-0.5, 1.0, 0.2, -1.0, -0.3, 0.0, 0.4, 0.1, -0.8]);
        let m = LinearModel { a };
        let x0 = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let rec = record(&m, &x0, 0.0, 0.7, StepPolicy::default()).unwrap();
        let tl = rec.tangent_linear_matrix(&m, &DMatrix::identity(3, 3));
        let cols: Vec<_> =
            (0..3).map(|k| rec.adjoint(&m, &DMatrix::<f64>::identity(3, 3).column(k).into_owned())).collect();
        let adj = DMatrix::from_columns(&cols);
        assert!((tl.transpose() - adj).amax() < 1e-13);
    }
}
