use nalgebra::{DMatrix, DVector};

use crate::{Result, VfpError};

/// Solves `M x = b` by unrestarted GMRES from `x₀ = 0`, where `apply`
/// evaluates `v ↦ M v`. Returns the solution and the iteration count.
pub fn gmres(
    mut apply: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    let n = b.len();
    let beta = b.norm();
    if beta == 0.0 {
        return Ok((DVector::zeros(n), 0));
    }
    let m = max_iter.max(1);
    let mut basis = vec![b / beta];
    let mut h = DMatrix::zeros(m + 1, m);
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = DVector::zeros(m + 1);
    g[0] = beta;
    for j in 0..m {
        let mut w = apply(&basis[j])?;
        for (i, v) in basis.iter().enumerate() {
            let hij = w.dot(v);
            h[(i, j)] = hij;
            w.axpy(-hij, v, 1.0);
        }
        let wnorm = w.norm();
        h[(j + 1, j)] = wnorm;
        for i in 0..j {
            let (a, c) = (h[(i, j)], h[(i + 1, j)]);
            h[(i, j)] = cs[i] * a + sn[i] * c;
            h[(i + 1, j)] = -sn[i] * a + cs[i] * c;
        }
        let (a, c) = (h[(j, j)], h[(j + 1, j)]);
        let r = a.hypot(c);
        if r == 0.0 {
            return Err(VfpError::LinearSolve("GMRES breakdown on a singular operator".into()));
        }
        cs[j] = a / r;
        sn[j] = c / r;
        h[(j, j)] = r;
        h[(j + 1, j)] = 0.0;
        g[j + 1] = -sn[j] * g[j];
        g[j] *= cs[j];
        if !g[j + 1].is_finite() {
            return Err(VfpError::NonFinite("GMRES residual"));
        }
        if g[j + 1].abs() <= tol * beta || wnorm == 0.0 {
            let k = j + 1;
            let y = h
                .view((0, 0), (k, k))
                .solve_upper_triangular(&g.rows(0, k).into_owned())
                .ok_or_else(|| VfpError::LinearSolve("GMRES triangular solve".into()))?;
            let mut x = DVector::zeros(n);
            for (i, yi) in y.iter().enumerate() {
                x.axpy(*yi, &basis[i], 1.0);
            }
            return Ok((x, k));
        }
        basis.push(w / wnorm);
    }
    Err(VfpError::LinearSolve(format!("GMRES did not reach tolerance {tol} in {m} iterations")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_system() {
        let a = DMatrix::from_fn(6, 6, |i, j| if i == j { 4.0 } else { ((i * 6 + j) as f64).sin() });
        let b = DVector::from_fn(6, |i, _| i as f64 - 1.5);
        let (x, iters) = gmres(|v| Ok(&a * v), &b, 1e-12, 20).unwrap();
        assert!(iters <= 6);
        assert!((&a * x - b).amax() < 1e-10);
    }

    #[test]
    fn zero_rhs() {
        let (x, iters) = gmres(|v| Ok(v.clone()), &DVector::zeros(3), 1e-10, 5).unwrap();
        assert_eq!((x, iters), (DVector::zeros(3), 0));
    }

    #[test]
    fn reports_non_convergence() {
        let a = DMatrix::from_fn(10, 10, |i, j| if (i + 1) % 10 == j { 1.0 } else { 0.0 });
        let b = DVector::from_fn(10, |i, _| if i == 0 { 1.0 } else { 0.0 });
        assert!(gmres(|v| Ok(&a * v), &b, 1e-12, 3).is_err());
    }
}
