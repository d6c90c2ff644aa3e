use nalgebra::{DMatrix, DVector};

use super::ModelSystem;

/// Lorenz '63 with parameters `(σ, ρ, β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz63 {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz63 {
    fn default() -> Self {
        Self { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }
}

impl ModelSystem for Lorenz63 {
    fn dimension(&self) -> usize {
        3
    }

    fn rhs(&self, _t: f64, s: &DVector<f64>) -> DVector<f64> {
        let (x, y, z) = (s[0], s[1], s[2]);
        DVector::from_vec(vec![self.sigma * (y - x), x * (self.rho - z) - y, x * y - self.beta * z])
    }

    fn jacobian(&self, _t: f64, s: &DVector<f64>) -> DMatrix<f64> {
        let (x, y, z) = (s[0], s[1], s[2]);
        DMatrix::from_row_slice(3, 3, &[-self.sigma, self.sigma, 0.0, self.rho - z, -1.0, -x, y, x, -self.beta])
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        vec![("sigma", self.sigma), ("rho", self.rho), ("beta", self.beta)]
    }
}

/// Lorenz '96 on a ring of `n` sites with forcing `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz96 {
    pub n: usize,
    pub forcing: f64,
}

impl Default for Lorenz96 {
    fn default() -> Self {
        Self { n: 40, forcing: 8.0 }
    }
}

impl Lorenz96 {
    pub fn new(n: usize, forcing: f64) -> Self {
        assert!(n >= 4, "Lorenz '96 needs at least 4 sites");
        Self { n, forcing }
    }

    #[inline]
    fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }
}

impl ModelSystem for Lorenz96 {
    fn dimension(&self) -> usize {
        self.n
    }

    fn rhs(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |i, _| {
            let i = i as isize;
            let (p1, m1, m2) = (self.wrap(i + 1), self.wrap(i - 1), self.wrap(i - 2));
            (x[p1] - x[m2]) * x[m1] - x[i as usize] + self.forcing
        })
    }

    fn jacobian(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n {
            let ii = i as isize;
            let (p1, m1, m2) = (self.wrap(ii + 1), self.wrap(ii - 1), self.wrap(ii - 2));
            j[(i, p1)] += x[m1];
            j[(i, m2)] -= x[m1];
            j[(i, m1)] += x[p1] - x[m2];
            j[(i, i)] -= 1.0;
        }
        j
    }

    fn jvp(&self, _t: f64, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            let ii = i as isize;
            let (p1, m1, m2) = (self.wrap(ii + 1), self.wrap(ii - 1), self.wrap(ii - 2));
            (v[p1] - v[m2]) * x[m1] + (x[p1] - x[m2]) * v[m1] - v[i]
        })
    }

    fn vjp(&self, _t: f64, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n, |k, _| {
            let kk = k as isize;
            let (m1, m2, p1, p2) = (self.wrap(kk - 1), self.wrap(kk - 2), self.wrap(kk + 1), self.wrap(kk + 2));
            w[m1] * x[m2] - w[p2] * x[p1] + w[p1] * (x[p2] - x[m1]) - w[k]
        })
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        vec![("F", self.forcing)]
    }
}

/// Linear system `x' = A x`, mostly useful as a test oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
}

impl ModelSystem for LinearModel {
    fn dimension(&self) -> usize {
        self.a.nrows()
    }

    fn rhs(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }

    fn jacobian(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}
