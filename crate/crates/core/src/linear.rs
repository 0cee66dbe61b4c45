//! Minimal vector-space abstraction so stencils, traces and extrapolation can
//! be written once for scalars, vectors and matrices.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

pub trait Linear: Clone {
    fn zero_like(&self) -> Self;
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn norm(&self) -> f64;

    fn scaled(&self, a: f64) -> Self {
        let mut out = self.zero_like();
        out.axpy(a, self);
        out
    }

    fn minus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

impl Linear for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl Linear for Vector3<f64> {
    fn zero_like(&self) -> Self {
        Vector3::zeros()
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
    fn norm(&self) -> f64 {
        Vector3::norm(self)
    }
}

impl Linear for Matrix3<f64> {
    fn zero_like(&self) -> Self {
        Matrix3::zeros()
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
    fn norm(&self) -> f64 {
        Matrix3::norm(self)
    }
}

impl Linear for DVector<f64> {
    fn zero_like(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
    fn norm(&self) -> f64 {
        DVector::norm(self)
    }
}

impl Linear for DMatrix<f64> {
    fn zero_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
    fn norm(&self) -> f64 {
        DMatrix::norm(self)
    }
}

/// Skew-symmetric matrix of `v`, so that `skew(v) * u == v.cross(&u)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Central finite-difference step for a coordinate of magnitude `x`.
pub(crate) fn fd_step(rel: f64, x: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central-difference gradient of a scalar function of a vector.
pub(crate) fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, at: &DVector<f64>, rel: f64) -> DVector<f64> {
    let mut g = DVector::zeros(at.len());
    let mut probe = at.clone();
    for i in 0..at.len() {
        let h = fd_step(rel, at[i]);
        probe[i] = at[i] + h;
        let fp = f(&probe);
        probe[i] = at[i] - h;
        let fm = f(&probe);
        probe[i] = at[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference gradient of a scalar function of a matrix.
pub(crate) fn fd_gradient_matrix(f: impl Fn(&DMatrix<f64>) -> f64, at: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(at.nrows(), at.ncols());
    let mut probe = at.clone();
    for i in 0..at.nrows() {
        for j in 0..at.ncols() {
            let h = fd_step(rel, at[(i, j)]);
            probe[(i, j)] = at[(i, j)] + h;
            let fp = f(&probe);
            probe[(i, j)] = at[(i, j)] - h;
            let fm = f(&probe);
            probe[(i, j)] = at[(i, j)];
            g[(i, j)] = (fp - fm) / (2.0 * h);
        }
    }
    g
}

pub(crate) fn fd_gradient3(f: impl Fn(&Vector3<f64>) -> f64, at: &Vector3<f64>, rel: f64) -> Vector3<f64> {
    let mut g = Vector3::zeros();
    for i in 0..3 {
        let h = fd_step(rel, at[i]);
        let mut p = *at;
        p[i] += h;
        let fp = f(&p);
        p[i] = at[i] - h;
        let fm = f(&p);
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

pub(crate) fn fd_gradient33(f: impl Fn(&Matrix3<f64>) -> f64, at: &Matrix3<f64>, rel: f64) -> Matrix3<f64> {
    let mut g = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let h = fd_step(rel, at[(i, j)]);
            let mut p = *at;
            p[(i, j)] += h;
            let fp = f(&p);
            p[(i, j)] = at[(i, j)] - h;
            let fm = f(&p);
            g[(i, j)] = (fp - fm) / (2.0 * h);
        }
    }
    g
}

/// Jacobian of a vector map on ℝ³ by central differences: `J[(i, j)] = ∂f_i/∂x_j`.
pub(crate) fn fd_jacobian3(f: impl Fn(&Vector3<f64>) -> Vector3<f64>, at: &Vector3<f64>, rel: f64) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for c in 0..3 {
        let h = fd_step(rel, at[c]);
        let mut p = *at;
        p[c] += h;
        let fp = f(&p);
        p[c] = at[c] - h;
        let fm = f(&p);
        j.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    j
}

/// Least-squares slope of `ln(y)` against `ln(x)`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Ordinary least squares `y ≈ slope * x + intercept`; returns `(slope, intercept, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}
