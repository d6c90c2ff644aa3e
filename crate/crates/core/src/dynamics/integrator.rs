use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ModelSystem, Trajectory};
use crate::{linalg::all_finite, Result, StateVector, VfpError};

// Dormand-Prince 5(4) tableau.
pub(super) const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
pub(super) const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
pub(super) const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
// b - b* for the embedded error estimate (7 stages, FSAL).
const E: [f64; 7] =
    [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];

/// How the interval between two output times is subdivided.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPolicy {
    /// Fixed steps, as few as possible with every step `≤ max_step`.
    MaxStep { max_step: f64 },
    /// Exactly `substeps` equal steps.
    Substeps { substeps: usize },
    /// Embedded error control; fails if the step drops below `min_step`.
    Adaptive { rtol: f64, atol: f64, min_step: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::MaxStep { max_step: 0.01 }
    }
}

impl StepPolicy {
    /// Step sizes for the fixed-step policies, `None` for adaptive control.
    pub fn fixed_steps(&self, t0: f64, t1: f64) -> Option<Vec<f64>> {
        let span = t1 - t0;
        let n = match *self {
            StepPolicy::MaxStep { max_step } => ((span / max_step) - 1e-9).ceil().max(1.0) as usize,
            StepPolicy::Substeps { substeps } => substeps.max(1),
            StepPolicy::Adaptive { .. } => return None,
        };
        Some(vec![span / n as f64; n])
    }
}

/// Intermediate stage states `Y_i` of one Dormand-Prince step.
pub(super) struct StepStages {
    pub stages: Vec<DVector<f64>>,
    pub slopes: Vec<DVector<f64>>,
}

/// One explicit Dormand-Prince step of the fifth-order solution.
pub(super) fn dp_step(
    model: &dyn ModelSystem,
    t: f64,
    x: &DVector<f64>,
    h: f64,
    keep_stages: bool,
) -> (DVector<f64>, Option<StepStages>) {
    let mut slopes: Vec<DVector<f64>> = Vec::with_capacity(6);
    let mut stages: Vec<DVector<f64>> = Vec::with_capacity(if keep_stages { 6 } else { 0 });
    for i in 0..6 {
        let mut y = x.clone();
        for (j, k) in slopes.iter().enumerate() {
            if A[i][j] != 0.0 {
                y.axpy(h * A[i][j], k, 1.0);
            }
        }
        slopes.push(model.rhs(t + C[i] * h, &y));
        if keep_stages {
            stages.push(y);
        }
    }
    let mut out = x.clone();
    for (b, k) in B.iter().zip(&slopes) {
        if *b != 0.0 {
            out.axpy(h * b, k, 1.0);
        }
    }
    let st = keep_stages.then_some(StepStages { stages, slopes });
    (out, st)
}

pub(super) fn run(
    model: &dyn ModelSystem,
    x0: &StateVector,
    t0: f64,
    t1: f64,
    policy: StepPolicy,
    mut on_step: impl FnMut(f64, f64, &DVector<f64>, Option<StepStages>, &DVector<f64>),
    keep_stages: bool,
) -> Result<StateVector> {
    if x0.len() != model.dimension() {
        return Err(VfpError::DimensionMismatch { expected: model.dimension(), got: x0.len() });
    }
    if !(t1 > t0) {
        return Err(VfpError::InvalidParameter(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let mut x = x0.clone();
    let mut t = t0;
    match policy.fixed_steps(t0, t1) {
        Some(steps) => {
            let n = steps.len();
            for (k, h) in steps.into_iter().enumerate() {
                let (next, st) = dp_step(model, t, &x, h, keep_stages);
                if !all_finite(&next) {
                    return Err(VfpError::NonFinite("model state"));
                }
                let tn = if k + 1 == n { t1 } else { t0 + (k + 1) as f64 * h };
                on_step(t, h, &x, st, &next);
                x = next;
                t = tn;
            }
        }
        None => {
            let StepPolicy::Adaptive { rtol, atol, min_step } = policy else { unreachable!() };
            let mut h = ((t1 - t0) / 100.0).min(0.01);
            while t < t1 {
                let last = t + h >= t1 - 1e-14 * t1.abs().max(1.0);
                let hh = if last { t1 - t } else { h };
                let (next, st) = dp_step(model, t, &x, hh, true);
                let st = st.expect("stages kept");
                let k7 = model.rhs(t + hh, &next);
                let mut err = DVector::zeros(x.len());
                for (e, k) in E.iter().zip(st.slopes.iter().chain(std::iter::once(&k7))) {
                    if *e != 0.0 {
                        err.axpy(hh * e, k, 1.0);
                    }
                }
                let scaled = err
                    .iter()
                    .zip(x.iter().zip(next.iter()))
                    .map(|(e, (a, b))| {
                        let sc = atol + rtol * a.abs().max(b.abs());
                        (e / sc).powi(2)
                    })
                    .sum::<f64>();
                let en = (scaled / x.len() as f64).sqrt();
                if !en.is_finite() || !all_finite(&next) {
                    h = hh * 0.2;
                } else if en <= 1.0 {
                    on_step(t, hh, &x, keep_stages.then_some(st), &next);
                    x = next;
                    t = if last { t1 } else { t + hh };
                    let fac = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-0.2) };
                    h = hh * fac.clamp(0.2, 5.0);
                    continue;
                } else {
                    h = hh * (0.9 * en.powf(-0.2)).clamp(0.2, 1.0);
                }
                if h < min_step {
                    return Err(VfpError::StepSizeUnderflow { step: h, min: min_step, t });
                }
            }
        }
    }
    Ok(x)
}

/// Integrates `model` from `t0` to `t1`, returning every accepted step.
pub fn integrate(
    model: &dyn ModelSystem,
    x0: &StateVector,
    t0: f64,
    t1: f64,
    policy: StepPolicy,
) -> Result<Trajectory> {
    let mut times = vec![t0];
    let mut states = vec![x0.clone()];
    run(
        model,
        x0,
        t0,
        t1,
        policy,
        |t, h, _x, _st, next| {
            times.push(t + h);
            states.push(next.clone());
        },
        false,
    )?;
    if let Some(t) = times.last_mut() {
        *t = t1;
    }
    Trajectory::new(times, states)
}

/// Final state only; the cheap path used for ensemble forecasts.
pub fn propagate(
    model: &dyn ModelSystem,
    x0: &StateVector,
    t0: f64,
    t1: f64,
    policy: StepPolicy,
) -> Result<StateVector> {
    run(model, x0, t0, t1, policy, |_, _, _, _, _| {}, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LinearModel;
    use nalgebra::DMatrix;

    #[test]
    fn fixed_step_counts() {
        let p = StepPolicy::MaxStep { max_step: 0.01 };
        assert_eq!(p.fixed_steps(0.0, 0.12).unwrap().len(), 12);
        assert_eq!(p.fixed_steps(0.0, 0.05).unwrap().len(), 5);
        assert_eq!(p.fixed_steps(0.0, 0.0105).unwrap().len(), 2);
        assert_eq!(StepPolicy::Substeps { substeps: 3 }.fixed_steps(0.0, 1.0).unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn exponential_decay() {
        let m = LinearModel { a: DMatrix::from_element(1, 1, -1.0) };
        let x0 = DVector::from_element(1, 1.0);
        let x1 = propagate(&m, &x0, 0.0, 1.0, StepPolicy::default()).unwrap();
        assert!((x1[0] - (-1f64).exp()).abs() < 1e-8);
        let tr =
            integrate(&m, &x0, 0.0, 1.0, StepPolicy::Adaptive { rtol: 1e-10, atol: 1e-12, min_step: 1e-10 }).unwrap();
        assert!((tr.last()[0] - (-1f64).exp()).abs() < 1e-8);
        assert_eq!(*tr.times().last().unwrap(), 1.0);
    }

    #[test]
    fn harmonic_oscillator_period() {
        let m = LinearModel { a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]) };
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let x1 = propagate(&m, &x0, 0.0, 2.0 * std::f64::consts::PI, StepPolicy::default()).unwrap();
        assert!((x1 - x0).amax() < 1e-9);
    }

    #[test]
    fn rejects_reversed_interval() {
        let m = LinearModel { a: DMatrix::from_element(1, 1, -1.0) };
        assert!(propagate(&m, &DVector::zeros(1), 1.0, 0.0, StepPolicy::default()).is_err());
    }

    #[test]
    fn blow_up_signals_underflow() {
        // x' = x², x(0) = 1 blows up at t = 1.
        struct Riccati;
        impl ModelSystem for Riccati {
            fn dimension(&self) -> usize {
                1
            }
            fn rhs(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
                x.map(|v| v * v)
            }
            fn jacobian(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_element(1, 1, 2.0 * x[0])
            }
        }
        let r = propagate(
            &Riccati,
            &DVector::from_element(1, 1.0),
            0.0,
            2.0,
            StepPolicy::Adaptive { rtol: 1e-8, atol: 1e-8, min_step: 1e-8 },
        );
        assert!(matches!(r, Err(VfpError::StepSizeUnderflow { .. }) | Err(VfpError::NonFinite(_))));
    }
}
