//! Discontinuity surfaces: level-set geometry, one-sided traces and jumps,
//! surface calculus, and pointwise interfacial balances with and without
//! surface energy.
//!
//! The surface `Σ = {f = 0}` is oriented by `m = ∇f/|∇f|`; the plus side is
//! `f > 0`. Divergences follow the row convention used in the bulk, so
//! `(Div_Σ A)_i = Σ_k (∂_{t_k} A)_{ij} t_{kj}` over an orthonormal tangent
//! frame `t_1, t_2`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::NodeJet;
use crate::linear::{fd_gradient, fd_gradient3, fd_gradient33, fd_gradient_matrix, fd_jacobian3, skew, Linear};
use crate::manifold::{GroupTag, Manifold};
use crate::mechanics::{eshelby_at, LagrangianModel, ModelPartials, PARTIAL_STEP};

type Height = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type HeightGrad = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
type HeightHess = Arc<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>;
type VecField = Arc<dyn Fn(&Vector3<f64>) -> Vector3<f64> + Send + Sync>;

/// Built-in level-set shapes with closed-form derivatives.
#[derive(Clone)]
pub enum Shape {
    /// `f = n·(X − p)`.
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    /// `f = |X − c| − R`, outward normal.
    Sphere { center: Vector3<f64>, radius: f64 },
    /// `f = X₃ − g(X₁, X₂)`, normal pointing towards increasing `X₃`.
    Graph { height: Height, gradient: HeightGrad, hessian: HeightHess },
}

impl std::fmt::Debug for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Plane { point, normal } => write!(f, "Plane {{ point: {point:?}, normal: {normal:?} }}"),
            Shape::Sphere { center, radius } => write!(f, "Sphere {{ center: {center:?}, radius: {radius} }}"),
            Shape::Graph { .. } => write!(f, "Graph"),
        }
    }
}

/// An oriented surface with an optional virtual velocity field `u`.
#[derive(Clone, Debug)]
pub struct LevelSetSurface {
    shape: Shape,
    velocity: Option<VelocityField>,
    patch: Option<(Vector3<f64>, f64)>,
}

#[derive(Clone)]
struct VelocityField(VecField);

impl std::fmt::Debug for VelocityField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("VelocityField")
    }
}

const GRADIENT_FLOOR: f64 = 1e-12;

impl LevelSetSurface {
    pub fn plane(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let n = normal.norm();
        if !(n > GRADIENT_FLOOR) {
            return Err(Error::Geometry("plane normal must be nonzero".into()));
        }
        Ok(Self::from_shape(Shape::Plane { point, normal: normal / n }))
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Geometry(format!("sphere radius must be positive, got {radius}")));
        }
        Ok(Self::from_shape(Shape::Sphere { center, radius }))
    }

    pub fn graph(
        height: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
        hessian: impl Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
    ) -> Self {
        Self::from_shape(Shape::Graph { height: Arc::new(height), gradient: Arc::new(gradient), hessian: Arc::new(hessian) })
    }

    fn from_shape(shape: Shape) -> Self {
        Self { shape, velocity: None, patch: None }
    }

    pub fn with_velocity(mut self, u: impl Fn(&Vector3<f64>) -> Vector3<f64> + Send + Sync + 'static) -> Self {
        self.velocity = Some(VelocityField(Arc::new(u)));
        self
    }

    /// Restricts stencils to the ball `|X − center| ≤ radius`.
    pub fn with_patch(mut self, center: Vector3<f64>, radius: f64) -> Self {
        self.patch = Some((center, radius));
        self
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn level(&self, x: &Vector3<f64>) -> f64 {
        match &self.shape {
            Shape::Plane { point, normal } => normal.dot(&(x - point)),
            Shape::Sphere { center, radius } => (x - center).norm() - radius,
            Shape::Graph { height, .. } => x[2] - height(x[0], x[1]),
        }
    }

    pub fn level_gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match &self.shape {
            Shape::Plane { normal, .. } => *normal,
            Shape::Sphere { center, .. } => {
                let d = x - center;
                let r = d.norm();
                if r > 0.0 {
                    d / r
                } else {
                    Vector3::zeros()
                }
            }
            Shape::Graph { gradient, .. } => {
                let g = gradient(x[0], x[1]);
                Vector3::new(-g[0], -g[1], 1.0)
            }
        }
    }

    fn level_hessian(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        match &self.shape {
            Shape::Plane { .. } => Matrix3::zeros(),
            Shape::Sphere { center, .. } => {
                let d = x - center;
                let r = d.norm();
                let n = d / r;
                (Matrix3::identity() - n * n.transpose()) / r
            }
            Shape::Graph { hessian, .. } => {
                let h = hessian(x[0], x[1]);
                -Matrix3::new(h[0][0], h[0][1], 0.0, h[1][0], h[1][1], 0.0, 0.0, 0.0, 0.0)
            }
        }
    }

    fn checked_gradient(&self, x: &Vector3<f64>) -> Result<(Vector3<f64>, f64)> {
        let g = self.level_gradient(x);
        let n = g.norm();
        if !(n > GRADIENT_FLOOR) {
            return Err(Error::Geometry(format!("level-set gradient vanishes at {x:?}")));
        }
        Ok((g, n))
    }

    pub fn normal(&self, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let (g, n) = self.checked_gradient(x)?;
        Ok(g / n)
    }

    /// `Π = I − m ⊗ m`.
    pub fn projector(&self, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let m = self.normal(x)?;
        Ok(Matrix3::identity() - m * m.transpose())
    }

    /// `𝖫 = −∇_Σ m = −Π ∇²f Π / |∇f|`.
    pub fn curvature(&self, x: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let (g, n) = self.checked_gradient(x)?;
        let m = g / n;
        let p = Matrix3::identity() - m * m.transpose();
        Ok(-(p * self.level_hessian(x) * p) / n)
    }

    /// Normal speed `U = u·m` of the virtual motion (zero when none is set).
    pub fn normal_speed(&self, x: &Vector3<f64>) -> Result<f64> {
        match &self.velocity {
            Some(u) => Ok(u.0(x).dot(&self.normal(x)?)),
            None => Ok(0.0),
        }
    }

    /// Moves `y` onto `Σ` along the level-set gradient.
    pub fn project(&self, y: &Vector3<f64>) -> Result<Vector3<f64>> {
        match &self.shape {
            Shape::Plane { point, normal } => Ok(y - normal * normal.dot(&(y - point))),
            Shape::Sphere { center, radius } => {
                let d = y - center;
                let r = d.norm();
                if !(r > GRADIENT_FLOOR) {
                    return Err(Error::Geometry("cannot project the sphere centre".into()));
                }
                Ok(center + d * (radius / r))
            }
            Shape::Graph { .. } => {
                let mut p = *y;
                for _ in 0..60 {
                    let f = self.level(&p);
                    if f.abs() <= 1e-15 * (1.0 + p.norm()) {
                        return Ok(p);
                    }
                    let (g, n) = self.checked_gradient(&p)?;
                    p -= g * (f / (n * n));
                }
                Err(Error::Geometry(format!("projection onto the graph surface did not converge from {y:?}")))
            }
        }
    }

    pub fn contains(&self, x: &Vector3<f64>, tol: f64) -> bool {
        let g = self.level_gradient(x).norm();
        g > GRADIENT_FLOOR && (self.level(x) / g).abs() <= tol
    }

    fn require_on_surface(&self, x: &Vector3<f64>) -> Result<()> {
        if !self.contains(x, 1e-9 * (1.0 + x.norm())) {
            return Err(Error::Geometry(format!("point {x:?} is not on the surface (f = {:e})", self.level(x))));
        }
        Ok(())
    }

    /// Orthonormal tangent frame `(t₁, t₂)` with `t₁ × t₂ = m`.
    pub fn tangent_frame(&self, x: &Vector3<f64>) -> Result<[Vector3<f64>; 2]> {
        let m = self.normal(x)?;
        let axis = m.iamin();
        let e = Vector3::ith(axis, 1.0);
        let t = e - m * m.dot(&e);
        let n = t.norm();
        if n < 1e-8 {
            return Err(Error::Geometry("degenerate tangent frame".into()));
        }
        let t1 = t / n;
        Ok([t1, m.cross(&t1)])
    }

    /// Deterministic sample points on the surface.
    pub fn sample_points(&self, count: usize) -> Result<Vec<Vector3<f64>>> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let s = (i as f64 + 0.5) / count as f64;
            let p = match &self.shape {
                Shape::Sphere { center, radius } => {
                    // Fibonacci lattice, kept away from the poles.
                    let z = 0.9 * (1.0 - 2.0 * s);
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    center + Vector3::new(r * a.cos(), r * a.sin(), z) * *radius
                }
                _ => {
                    let (c, rad) = self.patch.unwrap_or((Vector3::zeros(), 1.0));
                    let r = 0.8 * rad * s.sqrt();
                    let a = golden * i as f64;
                    self.project(&(c + Vector3::new(r * a.cos(), r * a.sin(), 0.0)))?
                }
            };
            out.push(self.project(&p)?);
        }
        Ok(out)
    }
}

/// One-sided traces, jump `[a] = a⁺ − a⁻` and average `⟨a⟩ = ½(a⁺ + a⁻)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord<T> {
    pub plus: T,
    pub minus: T,
    pub jump: T,
    pub average: T,
    /// Largest extrapolation error estimate of the two traces.
    pub error: f64,
}

impl<T: Linear> JumpRecord<T> {
    pub fn new(plus: T, minus: T) -> Self {
        let jump = plus.minus(&minus);
        let mut average = plus.scaled(0.5);
        average.axpy(0.5, &minus);
        Self { plus, minus, jump, average, error: 0.0 }
    }
}

/// Trace extraction settings: offsets `(4h, 2h, h)` along `±m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub h: f64,
    /// Relative bound on the extrapolation error estimate.
    pub tol: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { h: 1e-3, tol: 1e-3 }
    }
}

/// Limit of samples taken at `(4h, 2h, h)`, exact for quadratics in `ε`,
/// with the difference to the linear extrapolant as error estimate.
fn richardson<T: Linear>(far: &T, mid: &T, near: &T) -> (T, f64) {
    let mut limit = far.scaled(1.0 / 3.0);
    limit.axpy(-2.0, mid);
    limit.axpy(8.0 / 3.0, near);
    let mut linear = near.scaled(2.0);
    linear.axpy(-1.0, mid);
    let err = limit.minus(&linear).norm();
    (limit, err)
}

fn check_convergence(err: f64, value: f64, opts: &TraceOptions, what: &str) -> Result<()> {
    if !(err <= opts.tol * value.max(1.0)) {
        return Err(Error::TraceDivergence(format!("{what}: extrapolation error estimate {err:e} exceeds tolerance")));
    }
    Ok(())
}

/// Richardson-extrapolated traces of `field` at `x ∈ Σ`.
pub fn traces<T: Linear>(surface: &LevelSetSurface, x: &Vector3<f64>, field: impl Fn(&Vector3<f64>) -> T, opts: &TraceOptions) -> Result<JumpRecord<T>> {
    surface.require_on_surface(x)?;
    let m = surface.normal(x)?;
    let side = |sign: f64| -> (T, f64) {
        let v: Vec<T> = [4.0, 2.0, 1.0].iter().map(|k| field(&(x + m * (sign * k * opts.h)))).collect();
        richardson(&v[0], &v[1], &v[2])
    };
    let (plus, ep) = side(1.0);
    let (minus, em) = side(-1.0);
    check_convergence(ep, plus.norm(), opts, "outer trace")?;
    check_convergence(em, minus.norm(), opts, "inner trace")?;
    let mut rec = JumpRecord::new(plus, minus);
    rec.error = ep.max(em);
    Ok(rec)
}

/// Surface-difference step used by [`surface_gradient`] and friends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceStencil {
    pub h: f64,
}

impl Default for SurfaceStencil {
    fn default() -> Self {
        Self { h: 1e-4 }
    }
}

/// The stencil points `p(±h t_k)` around `x`: central differences in the
/// two tangent directions (a 5-point stencil with the centre unused by
/// first derivatives).
fn stencil_points(surface: &LevelSetSurface, x: &Vector3<f64>, st: &SurfaceStencil) -> Result<([Vector3<f64>; 2], [[Vector3<f64>; 2]; 2])> {
    surface.require_on_surface(x)?;
    if !(st.h > 0.0) {
        return Err(Error::Geometry("surface stencil step must be positive".into()));
    }
    if let Shape::Sphere { radius, .. } = surface.shape {
        if st.h > 0.25 * radius {
            return Err(Error::Geometry(format!("surface stencil step {} is too large for radius {radius}", st.h)));
        }
    }
    let frame = surface.tangent_frame(x)?;
    let mut pts = [[Vector3::zeros(); 2]; 2];
    for k in 0..2 {
        for (j, sign) in [1.0, -1.0].iter().enumerate() {
            let p = surface.project(&(x + frame[k] * (sign * st.h)))?;
            if let Some((c, r)) = surface.patch {
                if (p - c).norm() > r {
                    return Err(Error::Geometry("surface patch is too small for the Div_Σ stencil".into()));
                }
            }
            pts[k][j] = p;
        }
    }
    Ok((frame, pts))
}

fn tangent_derivatives<T: Linear>(
    surface: &LevelSetSurface,
    x: &Vector3<f64>,
    st: &SurfaceStencil,
    field: &dyn Fn(&Vector3<f64>) -> Result<T>,
) -> Result<([Vector3<f64>; 2], [T; 2])> {
    let (frame, pts) = stencil_points(surface, x, st)?;
    let d = |k: usize| -> Result<T> {
        let mut v = field(&pts[k][0])?;
        v.axpy(-1.0, &field(&pts[k][1])?);
        Ok(v.scaled(1.0 / (2.0 * st.h)))
    };
    Ok((frame, [d(0)?, d(1)?]))
}

/// `∇_Σ e` of a scalar field on `Σ`.
pub fn surface_gradient(
    surface: &LevelSetSurface,
    x: &Vector3<f64>,
    st: &SurfaceStencil,
    field: &dyn Fn(&Vector3<f64>) -> Result<f64>,
) -> Result<Vector3<f64>> {
    let (t, d) = tangent_derivatives(surface, x, st, field)?;
    Ok(t[0] * d[0] + t[1] * d[1])
}

/// `∇_Σ a` of a vector field on `Σ`.
pub fn surface_gradient_vector(
    surface: &LevelSetSurface,
    x: &Vector3<f64>,
    st: &SurfaceStencil,
    field: &dyn Fn(&Vector3<f64>) -> Result<Vector3<f64>>,
) -> Result<Matrix3<f64>> {
    let (t, d) = tangent_derivatives(surface, x, st, field)?;
    Ok(d[0] * t[0].transpose() + d[1] * t[1].transpose())
}

/// `Div_Σ a = tr ∇_Σ a`.
pub fn surface_divergence_vector(
    surface: &LevelSetSurface,
    x: &Vector3<f64>,
    st: &SurfaceStencil,
    field: &dyn Fn(&Vector3<f64>) -> Result<Vector3<f64>>,
) -> Result<f64> {
    let (t, d) = tangent_derivatives(surface, x, st, field)?;
    Ok(t[0].dot(&d[0]) + t[1].dot(&d[1]))
}

/// Row divergence `Div_Σ A` of a 3×3 tensor field.
pub fn surface_divergence_tensor(
    surface: &LevelSetSurface,
    x: &Vector3<f64>,
    st: &SurfaceStencil,
    field: &dyn Fn(&Vector3<f64>) -> Result<Matrix3<f64>>,
) -> Result<Vector3<f64>> {
    let (t, d) = tangent_derivatives(surface, x, st, field)?;
    Ok(d[0] * t[0] + d[1] * t[1])
}

/// Row divergence of a `dim × 3` field.
pub fn surface_divergence_rows(
    surface: &LevelSetSurface,
    x: &Vector3<f64>,
    st: &SurfaceStencil,
    field: &dyn Fn(&Vector3<f64>) -> Result<DMatrix<f64>>,
) -> Result<DVector<f64>> {
    let (t, d) = tangent_derivatives(surface, x, st, field)?;
    let col = |v: &Vector3<f64>| DVector::from_column_slice(v.as_slice());
    Ok(&d[0] * col(&t[0]) + &d[1] * col(&t[1]))
}

/// Analytic curvature and its stencil counterpart `−∇_Σ m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureCheck {
    pub analytic: Matrix3<f64>,
    pub stencil: Matrix3<f64>,
    pub mismatch: f64,
}

pub fn curvature_check(surface: &LevelSetSurface, x: &Vector3<f64>, st: &SurfaceStencil) -> Result<CurvatureCheck> {
    let analytic = surface.curvature(x)?;
    let stencil = -surface_gradient_vector(surface, x, st, &|y| surface.normal(y))?;
    Ok(CurvatureCheck { analytic, mismatch: (stencil - analytic).amax(), stencil })
}

/// Anisotropic surface energy `φ(m, 𝔽, ν, ℕ)`; partials default to central
/// differences.
pub trait SurfaceEnergy: Send + Sync {
    fn name(&self) -> String;

    fn value(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> f64;

    fn d_normal(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> Vector3<f64> {
        fd_gradient3(|v| self.value(v, f, nu, n), m, PARTIAL_STEP)
    }

    fn d_f(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> Matrix3<f64> {
        fd_gradient33(|v| self.value(m, v, nu, n), f, PARTIAL_STEP)
    }

    fn d_nu(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> DVector<f64> {
        fd_gradient(|v| self.value(m, f, v, n), nu, PARTIAL_STEP)
    }

    fn d_n(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> DMatrix<f64> {
        fd_gradient_matrix(|v| self.value(m, f, nu, v), n, PARTIAL_STEP)
    }
}

type PhiFn = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> f64 + Send + Sync;
type PhiDm = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Vector3<f64> + Send + Sync;
type PhiDf = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Matrix3<f64> + Send + Sync;
type PhiDnu = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> DVector<f64> + Send + Sync;
type PhiDn = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync;

/// Surface energy from closures with optional analytic partials.
#[derive(Clone)]
pub struct ClosureSurfaceEnergy {
    name: String,
    phi: Arc<PhiFn>,
    dm: Option<Arc<PhiDm>>,
    df: Option<Arc<PhiDf>>,
    dnu: Option<Arc<PhiDnu>>,
    dn: Option<Arc<PhiDn>>,
}

impl ClosureSurfaceEnergy {
    pub fn new(
        name: impl Into<String>,
        phi: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), phi: Arc::new(phi), dm: None, df: None, dnu: None, dn: None }
    }

    pub fn with_d_normal(mut self, d: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Vector3<f64> + Send + Sync + 'static) -> Self {
        self.dm = Some(Arc::new(d));
        self
    }

    pub fn with_d_f(mut self, d: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Matrix3<f64> + Send + Sync + 'static) -> Self {
        self.df = Some(Arc::new(d));
        self
    }

    pub fn with_d_nu(mut self, d: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.dnu = Some(Arc::new(d));
        self
    }

    pub fn with_d_n(mut self, d: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.dn = Some(Arc::new(d));
        self
    }
}

impl SurfaceEnergy for ClosureSurfaceEnergy {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn value(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> f64 {
        (self.phi)(m, f, nu, n)
    }
    fn d_normal(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> Vector3<f64> {
        match &self.dm {
            Some(d) => d(m, f, nu, n),
            None => fd_gradient3(|v| self.value(v, f, nu, n), m, PARTIAL_STEP),
        }
    }
    fn d_f(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> Matrix3<f64> {
        match &self.df {
            Some(d) => d(m, f, nu, n),
            None => fd_gradient33(|v| self.value(m, v, nu, n), f, PARTIAL_STEP),
        }
    }
    fn d_nu(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> DVector<f64> {
        match &self.dnu {
            Some(d) => d(m, f, nu, n),
            None => fd_gradient(|v| self.value(m, f, v, n), nu, PARTIAL_STEP),
        }
    }
    fn d_n(&self, m: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, n: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.dn {
            Some(d) => d(m, f, nu, n),
            None => fd_gradient_matrix(|v| self.value(m, f, nu, v), n, PARTIAL_STEP),
        }
    }
}

/// Second principal invariant `½((tr C)² − tr C²)`.
fn second_invariant(c: &DMatrix<f64>) -> f64 {
    let tr = c.trace();
    0.5 * (tr * tr - (c * c).trace())
}

/// `∂/∂A I₂(AᵀA) = 2A(tr C I − C)` with `C = AᵀA`.
fn d_second_invariant(a: &DMatrix<f64>) -> DMatrix<f64> {
    let c = a.transpose() * a;
    let k = DMatrix::identity(c.nrows(), c.ncols()) * c.trace() - &c;
    a * k * 2.0
}

fn to_dm(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| m[(i, j)])
}

fn to_m3(m: &DMatrix<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[(i, j)])
}

/// Ready-made surface energies.
pub mod surface_presets {
    use super::*;

    /// Pure surface tension `φ = σ`.
    pub fn constant(sigma: f64) -> ClosureSurfaceEnergy {
        ClosureSurfaceEnergy::new("constant", move |_, _, _, _| sigma)
            .with_d_normal(|_, _, _, _| Vector3::zeros())
            .with_d_f(|_, _, _, _| Matrix3::zeros())
            .with_d_nu(|_, _, nu, _| DVector::zeros(nu.len()))
            .with_d_n(|_, _, _, n| DMatrix::zeros(n.nrows(), n.ncols()))
    }

    /// `φ = ½a|𝔽|² + ½b|ℕ|²`.
    pub fn quadratic(a: f64, b: f64) -> ClosureSurfaceEnergy {
        ClosureSurfaceEnergy::new("quadratic", move |_, f, _, n| 0.5 * a * f.norm_squared() + 0.5 * b * n.norm_squared())
            .with_d_normal(|_, _, _, _| Vector3::zeros())
            .with_d_f(move |_, f, _, _| f * a)
            .with_d_nu(|_, _, nu, _| DVector::zeros(nu.len()))
            .with_d_n(move |_, _, _, n| n * b)
    }

    /// `φ = σ + a √I₂(𝔽ᵀ𝔽) + b I₂(ℕᵀℕ) + c m·m`: built from the surface
    /// area stretch and its order-parameter analogue, hence invariant under
    /// observer changes and under area-preserving relabeling of `Σ`.
    pub fn invariant(sigma: f64, a: f64, b: f64, c: f64) -> ClosureSurfaceEnergy {
        ClosureSurfaceEnergy::new("invariant", move |m, f, _, n| {
            let fd = to_dm(f);
            sigma + a * second_invariant(&(fd.transpose() * &fd)).max(0.0).sqrt() + b * second_invariant(&(n.transpose() * n)) + c * m.dot(m)
        })
        .with_d_normal(move |m, _, _, _| m * (2.0 * c))
        .with_d_f(move |_, f, _, _| {
            let fd = to_dm(f);
            let j = second_invariant(&(fd.transpose() * &fd)).max(0.0).sqrt();
            if j == 0.0 {
                return Matrix3::zeros();
            }
            to_m3(&(d_second_invariant(&fd) * (0.5 * a / j)))
        })
        .with_d_nu(|_, _, nu, _| DVector::zeros(nu.len()))
        .with_d_n(move |_, _, _, n| d_second_invariant(n) * b)
    }

    /// Non-objective control `φ = 𝔽₁₂ + ν·e₁`.
    pub fn non_invariant() -> ClosureSurfaceEnergy {
        ClosureSurfaceEnergy::new("non-invariant", |_, f, nu, _| f[(0, 1)] + nu[0])
    }
}

/// Surface kinematics at a point: `𝔽 = ⟨F⟩Π`, `ℕ = ⟨∇ν⟩Π` and normal parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceKinematics {
    pub ff: Matrix3<f64>,
    pub nn: DMatrix<f64>,
    pub f_normal: Vector3<f64>,
    pub grad_normal: DVector<f64>,
    /// Residual of `⟨F⟩ = 𝔽 + (⟨F⟩m)⊗m` and its `∇ν` counterpart.
    pub decomposition_residual: f64,
}

pub fn surface_kinematics(m: &Vector3<f64>, f_avg: &Matrix3<f64>, grad_avg: &DMatrix<f64>) -> SurfaceKinematics {
    let pi = Matrix3::identity() - m * m.transpose();
    let ff = f_avg * pi;
    let nn = grad_avg * to_dm(&pi);
    let f_normal = f_avg * m;
    let mcol = DVector::from_column_slice(m.as_slice());
    let grad_normal = grad_avg * &mcol;
    let r1 = (f_avg - ff - f_normal * m.transpose()).amax();
    let r2 = (grad_avg - &nn - &grad_normal * mcol.transpose()).amax();
    SurfaceKinematics { ff, nn, f_normal, grad_normal, decomposition_residual: r1.max(r2) }
}

/// Surface interactions derived from `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceResponses {
    pub phi: f64,
    /// Surface Piola–Kirchhoff stress `𝕋 = −∂_𝔽φ`.
    pub t: Matrix3<f64>,
    /// Surface microstress `𝕊 = −∂_ℕφ`.
    pub s: DMatrix<f64>,
    /// Surface self-force `𝔷 = ∂_νφ`.
    pub z: DVector<f64>,
    pub dm: Vector3<f64>,
    /// `ℂ_tan = φΠ − 𝔽ᵀ𝕋 − ℕᵀ𝕊`.
    pub c_tan: Matrix3<f64>,
    /// Surface shear `𝔠 = −∂_mφ − 𝕋ᵀ⟨F⟩m − 𝕊ᵀ⟨∇ν⟩m`.
    pub shear: Vector3<f64>,
}

pub fn surface_responses(phi: &dyn SurfaceEnergy, m: &Vector3<f64>, nu: &DVector<f64>, k: &SurfaceKinematics) -> SurfaceResponses {
    let value = phi.value(m, &k.ff, nu, &k.nn);
    let t = -phi.d_f(m, &k.ff, nu, &k.nn);
    let s = -phi.d_n(m, &k.ff, nu, &k.nn);
    let z = phi.d_nu(m, &k.ff, nu, &k.nn);
    let dm = phi.d_normal(m, &k.ff, nu, &k.nn);
    let pi = Matrix3::identity() - m * m.transpose();
    let nts = to_m3(&(k.nn.transpose() * &s));
    let c_tan = pi * value - k.ff.transpose() * t - nts;
    let st = s.transpose() * &k.grad_normal;
    let shear = -dm - t.transpose() * k.f_normal - Vector3::new(st[0], st[1], st[2]);
    SurfaceResponses { phi: value, t, s, z, dm, c_tan, shear }
}

type JetFn = Arc<dyn Fn(&Vector3<f64>) -> NodeJet + Send + Sync>;

/// A two-sided motion near `Σ`: `field` returns the jet of the piece on the
/// side of `Σ` containing the query point.
#[derive(Clone)]
pub struct InterfaceProblem {
    pub surface: LevelSetSurface,
    pub manifold: Arc<dyn Manifold>,
    pub model: Arc<dyn LagrangianModel>,
    pub rho0: f64,
    pub field: JetFn,
    pub traces: TraceOptions,
    pub stencil: SurfaceStencil,
}

/// Traces of every bulk quantity entering the jump conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceTraces {
    pub point: Vector3<f64>,
    pub m: Vector3<f64>,
    pub u: f64,
    pub f: JumpRecord<Matrix3<f64>>,
    pub xdot: JumpRecord<Vector3<f64>>,
    pub nu: JumpRecord<DVector<f64>>,
    pub grad_nu: JumpRecord<DMatrix<f64>>,
    pub p: JumpRecord<Matrix3<f64>>,
    pub s: JumpRecord<DMatrix<f64>>,
    /// `∂_ν̇χ`.
    pub pi: JumpRecord<DVector<f64>>,
    pub chi: JumpRecord<f64>,
    pub eshelby: JumpRecord<Matrix3<f64>>,
    /// `(∇ν)ᵀ ∂_ν̇χ`.
    pub grad_pi: JumpRecord<Vector3<f64>>,
    /// `|Fm|²`.
    pub fm2: JumpRecord<f64>,
}

struct SideValues {
    f: Matrix3<f64>,
    xdot: Vector3<f64>,
    nu: DVector<f64>,
    grad_nu: DMatrix<f64>,
    p: Matrix3<f64>,
    s: DMatrix<f64>,
    pi: DVector<f64>,
    chi: f64,
    eshelby: Matrix3<f64>,
    grad_pi: Vector3<f64>,
    fm2: f64,
}

/// Compatibility residuals `‖[F]Π‖` and `‖[ẋ] + U[F]m‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub coherency: f64,
    pub kinematic: f64,
    pub pass: bool,
}

pub const COMPATIBILITY_TOL: f64 = 1e-8;

/// Residuals of the balances across an unstructured surface.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstructuredResiduals {
    /// `[P]m + ρ₀[ẋ]U`
    pub r_std: Vector3<f64>,
    /// `[𝒮]m + ρ₀[∂_ν̇χ]U`
    pub r_sub: DVector<f64>,
    /// `m·[ℙ]m − ρ₀U[(∇ν)ᵀ∂_ν̇χ]·m − ½ρ₀[χ] + ½ρ₀U²[|Fm|²]`
    pub r_cfg: f64,
}

/// Residuals of the balances across a structured surface.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredResiduals {
    /// `[P]m + Div_Σ𝕋 + ρ₀[ẋ]U`
    pub r_std: Vector3<f64>,
    /// `[𝒮]m + Div_Σ𝕊 − 𝔷 + ρ₀[∂_ν̇χ]U`
    pub r_sub: DVector<f64>,
    /// `m·[ℙ]m + ℂ_tan·𝖫 + Div_Σ𝔠 − ρ₀U[(∇ν)ᵀ∂_ν̇χ]·m − ρ₀[χ] + ½ρ₀U²[|Fm|²]`
    pub r_cfg: f64,
    /// `m·[ℙ]m` on its own, for closure checks.
    pub normal_eshelby_jump: f64,
    /// `ℂ_tan·𝖫`.
    pub curvature_term: f64,
}

impl InterfaceProblem {
    pub fn new(surface: LevelSetSurface, manifold: Arc<dyn Manifold>, model: Arc<dyn LagrangianModel>, rho0: f64, field: JetFn) -> Self {
        Self { surface, manifold, model, rho0, field, traces: TraceOptions::default(), stencil: SurfaceStencil::default() }
    }

    fn side_values(&self, y: &Vector3<f64>, m: &Vector3<f64>) -> SideValues {
        let jet = (self.field)(y);
        let mp = ModelPartials::of(self.model.as_ref(), &jet);
        let pi = mp.dchi_dnudot.clone();
        let gp = jet.grad_nu.transpose() * &pi;
        SideValues {
            p: mp.de_df * self.rho0,
            s: &mp.de_dgrad * self.rho0,
            chi: mp.chi,
            eshelby: eshelby_at(&mp, &jet, self.rho0),
            grad_pi: Vector3::new(gp[0], gp[1], gp[2]),
            fm2: (jet.f * m).norm_squared(),
            pi,
            f: jet.f,
            xdot: jet.xdot,
            nu: jet.nu,
            grad_nu: jet.grad_nu,
        }
    }

    /// Traces of all bulk quantities at `x ∈ Σ`.
    pub fn traces_at(&self, x: &Vector3<f64>) -> Result<InterfaceTraces> {
        self.surface.require_on_surface(x)?;
        let m = self.surface.normal(x)?;
        let h = self.traces.h;
        let sample = |sign: f64| -> Vec<SideValues> { [4.0, 2.0, 1.0].iter().map(|k| self.side_values(&(x + m * (sign * k * h)), &m)).collect() };
        let plus = sample(1.0);
        let minus = sample(-1.0);
        let opts = self.traces;
        fn rec<T: Linear>(plus: &[SideValues], minus: &[SideValues], get: impl Fn(&SideValues) -> &T, opts: &TraceOptions, what: &str) -> Result<JumpRecord<T>> {
            let (p, ep) = richardson(get(&plus[0]), get(&plus[1]), get(&plus[2]));
            let (q, eq) = richardson(get(&minus[0]), get(&minus[1]), get(&minus[2]));
            check_convergence(ep, p.norm(), opts, what)?;
            check_convergence(eq, q.norm(), opts, what)?;
            let mut r = JumpRecord::new(p, q);
            r.error = ep.max(eq);
            Ok(r)
        }
        let mut nu = rec(&plus, &minus, |s| &s.nu, &opts, "ν")?;
        nu.jump = self.manifold.chart_difference(&nu.minus, &nu.plus);
        if !self.manifold.is_linear() && nu.jump.norm() > 1e-8 {
            return Err(Error::Model(format!(
                "order parameter jumps by {:e} across the surface; jump conditions on {} need ν continuous",
                nu.jump.norm(),
                self.manifold.tag()
            )));
        }
        Ok(InterfaceTraces {
            point: *x,
            m,
            u: self.surface.normal_speed(x)?,
            f: rec(&plus, &minus, |s| &s.f, &opts, "F")?,
            xdot: rec(&plus, &minus, |s| &s.xdot, &opts, "ẋ")?,
            grad_nu: rec(&plus, &minus, |s| &s.grad_nu, &opts, "∇ν")?,
            p: rec(&plus, &minus, |s| &s.p, &opts, "P")?,
            s: rec(&plus, &minus, |s| &s.s, &opts, "𝒮")?,
            pi: rec(&plus, &minus, |s| &s.pi, &opts, "∂_ν̇χ")?,
            chi: rec(&plus, &minus, |s| &s.chi, &opts, "χ")?,
            eshelby: rec(&plus, &minus, |s| &s.eshelby, &opts, "ℙ")?,
            grad_pi: rec(&plus, &minus, |s| &s.grad_pi, &opts, "(∇ν)ᵀ∂_ν̇χ")?,
            fm2: rec(&plus, &minus, |s| &s.fm2, &opts, "|Fm|²")?,
            nu,
        })
    }

    pub fn compatibility(&self, x: &Vector3<f64>) -> Result<CompatibilityReport> {
        let tr = self.traces_at(x)?;
        let pi = Matrix3::identity() - tr.m * tr.m.transpose();
        let coherency = (tr.f.jump * pi).norm();
        let kinematic = (tr.xdot.jump + tr.f.jump * tr.m * tr.u).norm();
        Ok(CompatibilityReport { coherency, kinematic, pass: coherency <= COMPATIBILITY_TOL && kinematic <= COMPATIBILITY_TOL })
    }

    pub fn kinematics_at(&self, tr: &InterfaceTraces) -> SurfaceKinematics {
        surface_kinematics(&tr.m, &tr.f.average, &tr.grad_nu.average)
    }

    pub fn unstructured_residuals(&self, x: &Vector3<f64>) -> Result<UnstructuredResiduals> {
        let tr = self.traces_at(x)?;
        Ok(self.unstructured_from(&tr))
    }

    fn unstructured_from(&self, tr: &InterfaceTraces) -> UnstructuredResiduals {
        let (m, u, rho) = (tr.m, tr.u, self.rho0);
        let mcol = DVector::from_column_slice(m.as_slice());
        UnstructuredResiduals {
            r_std: tr.p.jump * m + tr.xdot.jump * (rho * u),
            r_sub: &tr.s.jump * &mcol + &tr.pi.jump * (rho * u),
            r_cfg: m.dot(&(tr.eshelby.jump * m)) - rho * u * tr.grad_pi.jump.dot(&m) - 0.5 * rho * tr.chi.jump + 0.5 * rho * u * u * tr.fm2.jump,
        }
    }

    fn responses_at(&self, phi: &dyn SurfaceEnergy, y: &Vector3<f64>) -> Result<SurfaceResponses> {
        let tr = self.traces_at(y)?;
        let k = self.kinematics_at(&tr);
        Ok(surface_responses(phi, &tr.m, &tr.nu.average, &k))
    }

    pub fn structured_residuals(&self, phi: &dyn SurfaceEnergy, x: &Vector3<f64>) -> Result<StructuredResiduals> {
        let tr = self.traces_at(x)?;
        let resp = surface_responses(phi, &tr.m, &tr.nu.average, &self.kinematics_at(&tr));
        let (frame, pts) = stencil_points(&self.surface, x, &self.stencil)?;
        let mut div_t = Vector3::zeros();
        let mut div_s = DVector::zeros(resp.s.nrows());
        let mut div_c = 0.0;
        for k in 0..2 {
            let a = self.responses_at(phi, &pts[k][0])?;
            let b = self.responses_at(phi, &pts[k][1])?;
            let scale = 1.0 / (2.0 * self.stencil.h);
            let tk = DVector::from_column_slice(frame[k].as_slice());
            div_t += (a.t - b.t) * frame[k] * scale;
            div_s += (&a.s - &b.s) * &tk * scale;
            div_c += (a.shear - b.shear).dot(&frame[k]) * scale;
        }
        let (m, u, rho) = (tr.m, tr.u, self.rho0);
        let mcol = DVector::from_column_slice(m.as_slice());
        let normal_eshelby_jump = m.dot(&(tr.eshelby.jump * m));
        let curvature_term = resp.c_tan.dot(&self.surface.curvature(x)?);
        Ok(StructuredResiduals {
            r_std: tr.p.jump * m + div_t + tr.xdot.jump * (rho * u),
            r_sub: &tr.s.jump * &mcol + div_s - &resp.z + &tr.pi.jump * (rho * u),
            r_cfg: normal_eshelby_jump + curvature_term + div_c - rho * u * tr.grad_pi.jump.dot(&m) - rho * tr.chi.jump
                + 0.5 * rho * u * u * tr.fm2.jump,
            normal_eshelby_jump,
            curvature_term,
        })
    }

    /// Per-point residual records over a cloud of surface points; with
    /// `phi = None` the unstructured balances are used.
    pub fn report(&self, phi: Option<&dyn SurfaceEnergy>, points: &[Vector3<f64>]) -> Result<SurfaceReport> {
        let mut records = Vec::with_capacity(points.len());
        for x in points {
            let m = self.surface.normal(x)?;
            let (r_std, r_sub, r_cfg) = match phi {
                Some(phi) => {
                    let r = self.structured_residuals(phi, x)?;
                    (r.r_std, r.r_sub, r.r_cfg)
                }
                None => {
                    let r = self.unstructured_residuals(x)?;
                    (r.r_std, r.r_sub, r.r_cfg)
                }
            };
            records.push(SurfacePointRecord {
                x: [x[0], x[1], x[2]],
                m: [m[0], m[1], m[2]],
                r_std: [r_std[0], r_std[1], r_std[2]],
                r_sub: r_sub.iter().copied().collect(),
                r_cfg,
            });
        }
        Ok(SurfaceReport::from_records(records))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePointRecord {
    pub x: [f64; 3],
    pub m: [f64; 3],
    pub r_std: [f64; 3],
    pub r_sub: Vec<f64>,
    pub r_cfg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub points: Vec<SurfacePointRecord>,
    pub max_std: f64,
    pub max_sub: f64,
    pub max_cfg: f64,
}

impl SurfaceReport {
    pub fn from_records(points: Vec<SurfacePointRecord>) -> Self {
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let max_std = points.iter().map(|p| norm(&p.r_std)).fold(0.0, f64::max);
        let max_sub = points.iter().map(|p| norm(&p.r_sub)).fold(0.0, f64::max);
        let max_cfg = points.iter().map(|p| p.r_cfg.abs()).fold(0.0, f64::max);
        Self { points, max_std, max_sub, max_cfg }
    }

    /// CSV cloud with columns `X1..X3, m1..m3, r_std1..3, |r_sub|, r_cfg`.
    pub fn to_csv(&self) -> String {
        use crate::io::fmt_f64;
        let mut out = String::from("X1,X2,X3,m1,m2,m3,r_std1,r_std2,r_std3,r_sub_norm,r_cfg\n");
        for p in &self.points {
            let sub = p.r_sub.iter().map(|a| a * a).sum::<f64>().sqrt();
            let cols: Vec<String> = p.x.iter().chain(&p.m).chain(&p.r_std).chain([&sub, &p.r_cfg]).map(|v| fmt_f64(*v)).collect();
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }
}

/// A surface state `(m, 𝖫, ⟨F⟩, ν, ⟨∇ν⟩)` at one point of `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSample {
    pub m: Vector3<f64>,
    pub curvature: Matrix3<f64>,
    pub f_avg: Matrix3<f64>,
    pub nu: DVector<f64>,
    pub grad_avg: DMatrix<f64>,
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

impl SurfaceSample {
    /// Random state; `nu` is drawn near `base` and moved onto the manifold.
    pub fn random(rng: &mut impl Rng, manifold: &dyn Manifold, base: &DVector<f64>) -> Self {
        let m = random_unit(rng);
        let pi = Matrix3::identity() - m * m.transpose();
        let l = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let curvature = pi * (l + l.transpose()) * pi;
        let f_avg = Matrix3::identity() + Matrix3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
        let nu = manifold.retract(&DVector::from_fn(base.len(), |i, _| base[i] + rng.gen_range(-0.3..0.3)));
        let dim = nu.len();
        let raw = DMatrix::from_fn(dim, 3, |_, _| rng.gen_range(-0.5..0.5));
        let cols: Vec<DVector<f64>> = (0..3).map(|j| manifold.project_tangent(&nu, &raw.column(j).into_owned())).collect();
        let grad_avg = DMatrix::from_columns(&cols);
        Self { m, curvature, f_avg, nu, grad_avg }
    }
}

/// Pointwise generators for the surface invariance identities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurfaceGenerators {
    /// `(w, ∇w)` of a relabeling admissible for `Σ`.
    pub relabel: Option<(Vector3<f64>, Matrix3<f64>)>,
    /// Skew `W` of an infinitesimal rigid spatial change `v = Wx + c`.
    pub spatial: Option<Matrix3<f64>>,
    pub group: Option<(GroupTag, DVector<f64>)>,
}

/// Checks properties of relabelings including `Σ`: `(∇w)m = 0`,
/// `∇_Σ(w·m) = 0` and area preservation `tr(Π∇w) = 0`.
pub fn validate_surface_relabel(sample: &SurfaceSample, w: &Vector3<f64>, grad: &Matrix3<f64>) -> Result<()> {
    let m = sample.m;
    let pi = Matrix3::identity() - m * m.transpose();
    let scale = grad.amax().max(1.0);
    if (grad * m).amax() > 1e-10 * scale {
        return Err(Error::Input("relabeling violates (∇w)m = 0".into()));
    }
    // ∇_Σ(w·m) = Π(∇wᵀm + (∇m)ᵀw) with ∇_Σ m = −𝖫
    if (pi * (grad.transpose() * m - sample.curvature * w)).amax() > 1e-10 * scale {
        return Err(Error::Input("relabeling violates ∇_Σ(w·m) = 0".into()));
    }
    if (pi * grad).trace().abs() > 1e-10 * scale {
        return Err(Error::Input("relabeling does not preserve surface area".into()));
    }
    Ok(())
}

/// An admissible relabeling gradient `∇w = T + m ⊗ 𝖫w` with `T` tangential
/// and traceless.
pub fn sample_surface_relabel(rng: &mut impl Rng, sample: &SurfaceSample) -> (Vector3<f64>, Matrix3<f64>) {
    let m = sample.m;
    let pi = Matrix3::identity() - m * m.transpose();
    let w = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let r = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let t = pi * r * pi;
    let t = t - pi * (t.trace() / 2.0);
    (w, t + m * (sample.curvature * w).transpose())
}

/// Values of the three surface invariance identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrResiduals {
    /// `𝔽ᵀ𝕋·∇_Σw + ℕᵀ𝕊·∇_Σw + ∂_mφ·(∇w)m`
    pub nr1: f64,
    /// `𝕋·∇_Σv` with `∇_Σv = W𝔽`
    pub nr2: f64,
    /// `𝔷·ξ_M(ν) − 𝕊·∇_Σ ξ_M(ν)`
    pub nr3: f64,
}

pub fn nr_residuals(phi: &dyn SurfaceEnergy, manifold: &dyn Manifold, sample: &SurfaceSample, gens: &SurfaceGenerators) -> Result<NrResiduals> {
    let m = sample.m;
    let pi = Matrix3::identity() - m * m.transpose();
    let k = surface_kinematics(&m, &sample.f_avg, &sample.grad_avg);
    let r = surface_responses(phi, &m, &sample.nu, &k);
    let mut out = NrResiduals { nr1: 0.0, nr2: 0.0, nr3: 0.0 };
    if let Some((w, grad)) = &gens.relabel {
        validate_surface_relabel(sample, w, grad)?;
        let gs = grad * pi;
        let nts = to_m3(&(k.nn.transpose() * &r.s));
        out.nr1 = (k.ff.transpose() * r.t).dot(&gs) + nts.dot(&gs) + r.dm.dot(&(grad * m));
    }
    if let Some(wskew) = &gens.spatial {
        if (wskew + wskew.transpose()).amax() > 1e-12 * wskew.amax().max(1.0) {
            return Err(Error::Input("spatial generator must be skew".into()));
        }
        out.nr2 = r.t.dot(&(wskew * k.ff));
    }
    if let Some((g, xi)) = &gens.group {
        let gen = manifold.generator(*g, xi, &sample.nu)?;
        let dgen = manifold.generator_jacobian(*g, xi, &sample.nu)?;
        out.nr3 = r.z.dot(&gen) - r.s.dot(&(dgen * &k.nn));
    }
    Ok(out)
}

/// Largest NR residuals over samples, each paired with randomly drawn
/// admissible generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrReport {
    pub nr1: f64,
    pub nr2: f64,
    pub nr3: f64,
    pub samples: usize,
}

pub fn surface_invariance_residuals(
    phi: &dyn SurfaceEnergy,
    manifold: &dyn Manifold,
    samples: &[SurfaceSample],
    rng: &mut impl Rng,
) -> Result<NrReport> {
    let group = manifold.groups().first().copied();
    let mut rep = NrReport { nr1: 0.0, nr2: 0.0, nr3: 0.0, samples: samples.len() };
    for s in samples {
        let q = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let gens = SurfaceGenerators {
            relabel: Some(sample_surface_relabel(rng, s)),
            spatial: Some(skew(&q)),
            group: group.map(|g| (g, DVector::from_fn(g.algebra_dim(manifold.dim()), |_, _| rng.gen_range(-1.0..1.0)))),
        };
        let r = nr_residuals(phi, manifold, s, &gens)?;
        rep.nr1 = rep.nr1.max(r.nr1.abs());
        rep.nr2 = rep.nr2.max(r.nr2.abs());
        rep.nr3 = rep.nr3.max(r.nr3.abs());
    }
    Ok(rep)
}

/// Residuals of the two surface lemmas at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `|Π·∇_Σw + ((∇w)m)·m|` (both sides equal `tr(Π∇w)` up to sign for
    /// isochoric `w`).
    pub lemma1: f64,
    /// `|m·Div_ΣA − A·𝖫|`.
    pub lemma2: f64,
    /// `Div w` measured with a fine step, independent of the stencil.
    pub div_w: f64,
    /// `|Am| + |mᵀA|`.
    pub superficial_defect: f64,
    pub precondition_violation: bool,
}

pub fn lemma_checks(
    surface: &LevelSetSurface,
    x: &Vector3<f64>,
    w: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    a: &dyn Fn(&Vector3<f64>) -> Matrix3<f64>,
    st: &SurfaceStencil,
) -> Result<LemmaReport> {
    let m = surface.normal(x)?;
    let pi = Matrix3::identity() - m * m.transpose();
    let grad_s = surface_gradient_vector(surface, x, st, &|y| Ok(w(y)))?;
    let normal_derivative = (w(&(x + m * st.h)) - w(&(x - m * st.h))) / (2.0 * st.h);
    let lemma1 = (pi.dot(&grad_s) + normal_derivative.dot(&m)).abs();
    let div_a = surface_divergence_tensor(surface, x, st, &|y| Ok(a(y)))?;
    let lemma2 = (m.dot(&div_a) - a(x).dot(&surface.curvature(x)?)).abs();
    let div_w = fd_jacobian3(|y| w(y), x, 1e-5).trace();
    let ax = a(x);
    let superficial_defect = (ax * m).norm() + (ax.transpose() * m).norm();
    let scale = w(x).norm().max(1.0);
    Ok(LemmaReport {
        lemma1,
        lemma2,
        div_w,
        superficial_defect,
        precondition_violation: div_w.abs() > 1e-6 * scale || superficial_defect > 1e-10 * ax.amax().max(1.0),
    })
}

/// Closed-form interfacial states used as oracles.
pub mod manufactured {
    use super::*;
    use crate::manifold::Euclidean;
    use crate::mechanics::{presets, ClosureModel};

    /// Two-phase bar across `X₁ = 0` with phase energies
    /// `e⁻ = ½μ|F − I|²` and `e⁺ = ½μ|F − F_T|² + c`, `F_T = I + (λ_T − 1)e₁⊗e₁`,
    /// under uniaxial stretches `λ±` and a moving phase boundary.
    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct BarParameters {
        pub mu: f64,
        pub lambda_t: f64,
        pub c: f64,
        pub lambda_minus: f64,
        pub v_minus: f64,
        pub rho0: f64,
    }

    impl Default for BarParameters {
        fn default() -> Self {
            Self { mu: 2.0, lambda_t: 1.5, c: 0.1, lambda_minus: 0.9, v_minus: 0.05, rho0: 1.3 }
        }
    }

    /// Jump-system solution: `λ⁺ + λ⁻ = λ_T + 1 + 2c/(μ(λ_T − 1))`,
    /// `U² = μ(1 − (λ_T − 1)/[λ])`, `v⁺ = v⁻ − U[λ]`.
    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct BarSolution {
        pub params: BarParameters,
        pub lambda_plus: f64,
        pub u: f64,
        pub v_plus: f64,
    }

    pub fn solve_bar(p: BarParameters) -> Result<BarSolution> {
        if (p.lambda_t - 1.0).abs() < 1e-12 || p.mu <= 0.0 {
            return Err(Error::Input("two-phase bar needs μ > 0 and λ_T ≠ 1".into()));
        }
        let lambda_plus = p.lambda_t + 1.0 + 2.0 * p.c / (p.mu * (p.lambda_t - 1.0)) - p.lambda_minus;
        let jump = lambda_plus - p.lambda_minus;
        let u2 = p.mu * (1.0 - (p.lambda_t - 1.0) / jump);
        if !(u2 >= 0.0) || jump.abs() < 1e-12 {
            return Err(Error::Input(format!("no real interface speed for these parameters (U² = {u2})")));
        }
        let u = u2.sqrt();
        Ok(BarSolution { params: p, lambda_plus, u, v_plus: p.v_minus - u * jump })
    }

    /// Bulk model of the bar; `traction_shift` adds `δ·(Fe₁)/ρ₀` to the
    /// plus-side energy so that `[P]m` moves by exactly `δ`.
    pub fn bar_model(p: BarParameters, traction_shift: Vector3<f64>) -> ClosureModel {
        let ft = Matrix3::identity() + Matrix3::from_diagonal(&Vector3::new(p.lambda_t - 1.0, 0.0, 0.0));
        let target = move |x: &Vector3<f64>| if x[0] > 0.0 { ft } else { Matrix3::identity() };
        let (mu, c, rho) = (p.mu, p.c, p.rho0);
        ClosureModel::new("two-phase-bar", move |x, f, _, _| {
            let base = 0.5 * mu * (f - target(x)).norm_squared();
            if x[0] > 0.0 {
                base + c + traction_shift.dot(&(f * Vector3::x())) / rho
            } else {
                base
            }
        })
        .with_de_df(move |x, f, _, _| {
            let d = (f - target(x)) * mu;
            if x[0] > 0.0 {
                d + traction_shift * Vector3::x().transpose() / rho
            } else {
                d
            }
        })
        .with_de_dnu(|_, _, nu, _| DVector::zeros(nu.len()))
        .with_de_dgrad(|_, _, _, g| DMatrix::zeros(g.nrows(), g.ncols()))
    }

    pub fn bar_problem(sol: &BarSolution, traction_shift: Vector3<f64>) -> Result<InterfaceProblem> {
        let p = sol.params;
        let surface = LevelSetSurface::plane(Vector3::zeros(), Vector3::x())?.with_velocity({
            let u = sol.u;
            move |_| Vector3::new(u, 0.0, 0.0)
        });
        let sol = *sol;
        let field = move |x: &Vector3<f64>| {
            let (lam, v) = if x[0] > 0.0 { (sol.lambda_plus, sol.v_plus) } else { (p.lambda_minus, p.v_minus) };
            NodeJet {
                material: *x,
                x: Vector3::new(lam * x[0], x[1], x[2]),
                xdot: Vector3::new(v, 0.0, 0.0),
                f: Matrix3::from_diagonal(&Vector3::new(lam, 1.0, 1.0)),
                nu: DVector::zeros(1),
                nudot: DVector::zeros(1),
                grad_nu: DMatrix::zeros(1, 3),
            }
        };
        let manifold: Arc<dyn Manifold> = Arc::new(Euclidean::new(1)?);
        Ok(InterfaceProblem::new(surface, manifold, Arc::new(bar_model(p, traction_shift)), p.rho0, Arc::new(field)))
    }

    /// Static sphere of radius `R` carrying tension `σ`; the bulk phases are
    /// stress-free with energy offsets chosen so that `m·[ℙ]m = 2σ/R`.
    pub fn sphere_tension(radius: f64, sigma: f64, mu: f64, rho0: f64) -> Result<InterfaceProblem> {
        let surface = LevelSetSurface::sphere(Vector3::zeros(), radius)?;
        let offset = 2.0 * sigma / (radius * rho0);
        let model = ClosureModel::new("phase-offset", move |x, f, _, _| {
            0.5 * mu * (f - Matrix3::identity()).norm_squared() + if x.norm() > radius { offset } else { 0.0 }
        })
        .with_de_df(move |_, f, _, _| (f - Matrix3::identity()) * mu)
        .with_de_dnu(|_, _, nu, _| DVector::zeros(nu.len()))
        .with_de_dgrad(|_, _, _, g| DMatrix::zeros(g.nrows(), g.ncols()));
        let field = |x: &Vector3<f64>| NodeJet {
            material: *x,
            x: *x,
            xdot: Vector3::zeros(),
            f: Matrix3::identity(),
            nu: DVector::zeros(1),
            nudot: DVector::zeros(1),
            grad_nu: DMatrix::zeros(1, 3),
        };
        let manifold: Arc<dyn Manifold> = Arc::new(Euclidean::new(1)?);
        Ok(InterfaceProblem::new(surface, manifold, Arc::new(model), rho0, Arc::new(field)))
    }

    /// Parameters of the structured plane interface `X₃ = 0` with
    /// `φ = ½a|𝔽|² + ½b|ℕ|²` over the bulk `e = ½μ|F − I|² + ½κ|∇ν|²`,
    /// `χ = ½ν̇²`.
    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct StructuredPlane {
        pub a: f64,
        pub b: f64,
        pub mu: f64,
        pub kappa: f64,
        pub rho0: f64,
        pub u: f64,
        pub k: [f64; 2],
        pub amplitude: [f64; 3],
        pub order_amplitude: f64,
    }

    impl Default for StructuredPlane {
        fn default() -> Self {
            Self { a: 0.4, b: 0.3, mu: 2.0, kappa: 1.5, rho0: 1.2, u: 0.3, k: [1.1, -0.7], amplitude: [0.05, -0.03, 0.04], order_amplitude: 0.2 }
        }
    }

    /// Builds both sides: the minus side is `x = X + d`, `ν = n`; the plus
    /// side adds `X₃ α d` and `X₃ β (n − n₀)` with `α, β` solving the surface
    /// balances for the surface Laplacians `Δ_Σ d = −|k|² d`.
    pub fn structured_plane(p: StructuredPlane) -> Result<(InterfaceProblem, ClosureSurfaceEnergy)> {
        let k2 = p.k[0] * p.k[0] + p.k[1] * p.k[1];
        let dm = p.mu - p.u * p.u;
        let dk = p.kappa - p.u * p.u;
        if dm.abs() < 1e-12 || dk.abs() < 1e-12 {
            return Err(Error::Input("interface speed is sonic; the jump system is singular".into()));
        }
        let alpha = -p.a * k2 / (p.rho0 * dm);
        let beta = -p.b * k2 / (p.rho0 * dk);
        let kv = Vector3::new(p.k[0], p.k[1], 0.0);
        let amp = Vector3::from(p.amplitude);
        let phases = Vector3::new(0.3, 1.1, -0.4);
        let (n0, w0, v0) = (0.5, 0.2, Vector3::new(0.1, -0.2, 0.05));
        let u = p.u;
        let field = move |x: &Vector3<f64>| {
            let arg = |i: usize| kv.dot(x) + phases[i];
            let d = Vector3::from_fn(|i, _| amp[i] * arg(i).sin());
            let grad_d = Vector3::from_fn(|i, _| amp[i] * arg(i).cos()) * kv.transpose();
            let psi = kv.dot(x) + 0.7;
            let n = n0 + p.order_amplitude * psi.sin();
            let grad_n = kv * (p.order_amplitude * psi.cos());
            let (x3, plus) = (x[2], x[2] > 0.0);
            let s = if plus { 1.0 } else { 0.0 };
            let f = Matrix3::identity() + grad_d + (d * Vector3::z().transpose() * alpha + grad_d * (alpha * x3)) * s;
            let gn = grad_n + (Vector3::z() * (beta * (n - n0)) + grad_n * (beta * x3)) * s;
            NodeJet {
                material: *x,
                x: x + d * (1.0 + s * alpha * x3),
                xdot: v0 - d * (s * u * alpha),
                f,
                nu: DVector::from_element(1, n + s * x3 * beta * (n - n0)),
                nudot: DVector::from_element(1, w0 - s * u * beta * (n - n0)),
                grad_nu: DMatrix::from_row_slice(1, 3, gn.as_slice()),
            }
        };
        let surface = LevelSetSurface::plane(Vector3::zeros(), Vector3::z())?.with_velocity(move |_| Vector3::new(0.0, 0.0, u));
        let manifold: Arc<dyn Manifold> = Arc::new(Euclidean::new(1)?);
        let model = Arc::new(presets::bulk_smooth(p.mu, p.kappa, 0.0));
        Ok((InterfaceProblem::new(surface, manifold, model, p.rho0, Arc::new(field)), surface_presets::quadratic(p.a, p.b)))
    }
}

#[cfg(test)]
mod tests {
    use super::manufactured::*;
    use super::surface_presets::*;
    use super::*;
    use crate::manifold::EmbeddedSphere;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plane() -> LevelSetSurface {
        LevelSetSurface::plane(Vector3::zeros(), Vector3::z()).unwrap()
    }

    #[test]
    fn trace_examples() {
        let s = plane();
        let x = Vector3::new(0.2, -0.1, 0.0);
        let opts = TraceOptions::default();
        let c = traces(&s, &x, |y| y[0] * 2.0 + 1.0, &opts).unwrap();
        assert!(c.jump.abs() < 1e-13 && (c.average - 1.4).abs() < 1e-13);
        let step = traces(&s, &x, |y| if y[2] > 0.0 { 1.0 } else { 0.0 }, &opts).unwrap();
        assert!((step.jump - 1.0).abs() < 1e-14 && (step.average - 0.5).abs() < 1e-14);
        let kink = |y: &Vector3<f64>| y[2].signum() * y[2] * y[2];
        assert!(traces(&s, &x, kink, &opts).unwrap().jump.abs() < 1e-12);
        let slope = traces(&s, &x, |y| 2.0 * y[2].abs(), &opts).unwrap();
        assert!(slope.jump.abs() < 1e-12);
        let second = traces(&s, &x, |y| 2.0 * y[2].signum(), &opts).unwrap();
        assert!((second.jump - 4.0).abs() < 1e-12);
        let wild = traces(&s, &x, |y| (1.0 / y[2]).sin(), &opts);
        assert!(matches!(wild, Err(Error::TraceDivergence(_))));
    }

    #[test]
    fn jump_algebra() {
        let a = JumpRecord::new(3.0, -1.0);
        assert_eq!(a.jump + 2.0 * a.minus, 2.0 * a.average);
        let b = JumpRecord::new(0.5, 2.0);
        let ab = JumpRecord::new(a.plus * b.plus, a.minus * b.minus);
        assert!((ab.jump - (a.jump * b.average + a.average * b.jump)).abs() < 1e-15);
    }

    #[test]
    fn off_surface_trace_is_rejected() {
        let r = traces(&plane(), &Vector3::new(0.0, 0.0, 0.1), |y| y[0], &TraceOptions::default());
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn sphere_geometry() {
        let r = 1.7;
        let s = LevelSetSurface::sphere(Vector3::new(0.1, 0.0, -0.2), r).unwrap();
        for x in s.sample_points(20).unwrap() {
            let m = s.normal(&x).unwrap();
            let p = s.projector(&x).unwrap();
            let l = s.curvature(&x).unwrap();
            assert!((p * m).amax() < 1e-12 && (p * p - p).amax() < 1e-12 && (l * m).amax() < 1e-12);
            assert!((l.trace() + 2.0 / r).abs() < 1e-10);
            assert!((l + p / r).amax() < 1e-12);
            let c = curvature_check(&s, &x, &SurfaceStencil { h: 1e-4 }).unwrap();
            assert!(c.mismatch < 1e-7, "{}", c.mismatch);
        }
        assert_eq!(plane().curvature(&Vector3::zeros()).unwrap(), Matrix3::zeros());
    }

    #[test]
    fn graph_curvature_matches_stencil() {
        let g = LevelSetSurface::graph(
            |x, y| 0.3 * x * x - 0.2 * x * y + 0.1 * y.sin(),
            |x, y| [0.6 * x - 0.2 * y, -0.2 * x + 0.1 * y.cos()],
            |_, y| [[0.6, -0.2], [-0.2, -0.1 * y.sin()]],
        );
        let x = g.project(&Vector3::new(0.3, -0.2, 0.0)).unwrap();
        let c = curvature_check(&g, &x, &SurfaceStencil { h: 1e-4 }).unwrap();
        assert!(c.mismatch < 1e-7, "{}", c.mismatch);
        let l = c.analytic;
        assert!((l - l.transpose()).amax() < 1e-14);
    }

    #[test]
    fn constant_field_has_zero_surface_gradient() {
        let s = LevelSetSurface::sphere(Vector3::zeros(), 1.0).unwrap();
        let x = Vector3::new(0.0, 0.6, 0.8);
        assert_eq!(surface_gradient(&s, &x, &SurfaceStencil::default(), &|_| Ok(3.0)).unwrap(), Vector3::zeros());
        assert!(matches!(surface_gradient(&s, &x, &SurfaceStencil { h: 0.5 }, &|_| Ok(3.0)), Err(Error::Geometry(_))));
    }

    #[test]
    fn surface_kinematics_decomposition() {
        let m = Vector3::z();
        let k = surface_kinematics(&m, &Matrix3::identity(), &DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 2.0]));
        assert_eq!(k.ff, Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)));
        assert!(k.nn.amax() < 1e-16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SurfaceSample::random(&mut rng, &EmbeddedSphere, &DVector::from_vec(vec![0.0, 0.0, 1.0]));
        assert!(surface_kinematics(&s.m, &s.f_avg, &s.grad_avg).decomposition_residual < 1e-14);
    }

    #[test]
    fn surface_response_examples() {
        let m = Vector3::z();
        let k = surface_kinematics(&m, &Matrix3::new(1.1, 0.2, 0.3, 0.0, 0.9, 0.1, 0.2, 0.0, 1.0), &DMatrix::from_row_slice(1, 3, &[0.1, 0.2, 0.3]));
        let nu = DVector::from_element(1, 0.4);
        let r = surface_responses(&constant(0.7), &m, &nu, &k);
        assert_eq!(r.t, Matrix3::zeros());
        assert_eq!(r.shear, Vector3::zeros());
        assert!((r.c_tan - (Matrix3::identity() - m * m.transpose()) * 0.7).amax() < 1e-16);
        let r = surface_responses(&quadratic(1.0, 0.0), &m, &nu, &k);
        assert!((r.t + k.ff).amax() < 1e-15);
        assert_eq!(r.z, DVector::zeros(1));
    }

    #[test]
    fn continuous_state_has_zero_residuals() {
        let s = plane().with_velocity(|_| Vector3::new(0.0, 0.0, 0.4));
        let field = |x: &Vector3<f64>| NodeJet {
            material: *x,
            x: x * 1.1,
            xdot: Vector3::new(0.1, 0.2, 0.3),
            f: Matrix3::identity() * 1.1,
            nu: DVector::from_element(1, x[0]),
            nudot: DVector::from_element(1, 0.2),
            grad_nu: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        };
        let prob = InterfaceProblem::new(
            s,
            Arc::new(crate::manifold::Euclidean::new(1).unwrap()),
            Arc::new(crate::mechanics::presets::bulk_smooth(1.0, 1.0, 0.5)),
            1.0,
            Arc::new(field),
        );
        let x = Vector3::new(0.3, 0.1, 0.0);
        let r = prob.unstructured_residuals(&x).unwrap();
        assert!(r.r_std.norm() < 1e-12 && r.r_sub.norm() < 1e-12 && r.r_cfg.abs() < 1e-12);
        let c = prob.compatibility(&x).unwrap();
        assert!(c.pass);
    }

    #[test]
    fn compatibility_examples() {
        let (lam, u) = (0.3, 0.7);
        let m = Vector3::z();
        let s = plane().with_velocity(move |_| Vector3::new(0.0, 0.0, u));
        let coherent = move |x: &Vector3<f64>| {
            let sg = if x[2] > 0.0 { 1.0 } else { -1.0 };
            NodeJet {
                material: *x,
                x: *x,
                xdot: -m * (sg * u * lam),
                f: Matrix3::identity() + m * m.transpose() * (sg * lam),
                nu: DVector::zeros(1),
                nudot: DVector::zeros(1),
                grad_nu: DMatrix::zeros(1, 3),
            }
        };
        let model = Arc::new(crate::mechanics::presets::quadratic_elastic(1.0));
        let r1: Arc<dyn Manifold> = Arc::new(crate::manifold::Euclidean::new(1).unwrap());
        let prob = InterfaceProblem::new(s.clone(), r1.clone(), model.clone(), 1.0, Arc::new(coherent));
        let c = prob.compatibility(&Vector3::zeros()).unwrap();
        assert!(c.coherency < 1e-12 && c.kinematic < 1e-12);
        let shear = 0.25;
        let sheared = move |x: &Vector3<f64>| {
            let mut j = coherent(x);
            if x[2] > 0.0 {
                j.f[(0, 1)] += shear;
            }
            j
        };
        let prob = InterfaceProblem::new(s, r1, model, 1.0, Arc::new(sheared));
        let c = prob.compatibility(&Vector3::zeros()).unwrap();
        assert!((c.coherency - shear).abs() < 1e-12 && !c.pass);
    }

    #[test]
    fn jumping_director_is_a_model_error() {
        let s2: Arc<dyn Manifold> = Arc::new(EmbeddedSphere);
        let field = |x: &Vector3<f64>| NodeJet {
            material: *x,
            x: *x,
            xdot: Vector3::zeros(),
            f: Matrix3::identity(),
            nu: if x[2] > 0.0 { DVector::from_vec(vec![0.0, 0.0, 1.0]) } else { DVector::from_vec(vec![1.0, 0.0, 0.0]) },
            nudot: DVector::zeros(3),
            grad_nu: DMatrix::zeros(3, 3),
        };
        let prob = InterfaceProblem::new(plane(), s2, Arc::new(crate::mechanics::presets::director_gradient(1.0)), 1.0, Arc::new(field));
        assert!(matches!(prob.unstructured_residuals(&Vector3::zeros()), Err(Error::Model(_))));
    }

    #[test]
    fn two_phase_bar_closes() {
        let sol = solve_bar(BarParameters::default()).unwrap();
        let prob = bar_problem(&sol, Vector3::zeros()).unwrap();
        let r = prob.unstructured_residuals(&Vector3::new(0.0, 0.2, -0.1)).unwrap();
        assert!(r.r_std.norm() < 1e-10 && r.r_sub.norm() < 1e-10 && r.r_cfg.abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn structured_plane_closes() {
        let (prob, phi) = structured_plane(StructuredPlane::default()).unwrap();
        let r = prob.structured_residuals(&phi, &Vector3::new(0.3, -0.4, 0.0)).unwrap();
        assert!(r.r_std.norm() < 1e-9 && r.r_sub.norm() < 1e-9, "{r:?}");
    }

    #[test]
    fn zero_surface_energy_reduces_to_unstructured() {
        let (prob, _) = structured_plane(StructuredPlane::default()).unwrap();
        let x = Vector3::new(0.1, 0.2, 0.0);
        let s = prob.structured_residuals(&constant(0.0), &x).unwrap();
        let u = prob.unstructured_residuals(&x).unwrap();
        assert_eq!(s.r_std, u.r_std);
        assert_eq!(s.r_sub, u.r_sub);
    }

    #[test]
    fn invariant_surface_energy_satisfies_nr() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = EmbeddedSphere;
        let base = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let samples: Vec<SurfaceSample> = (0..20).map(|_| SurfaceSample::random(&mut rng, &m, &base)).collect();
        let rep = surface_invariance_residuals(&invariant(0.5, 0.8, 0.3, 0.2), &m, &samples, &mut rng).unwrap();
        assert!(rep.nr1 < 1e-10 && rep.nr2 < 1e-10 && rep.nr3 < 1e-10, "{rep:?}");
        let zero = surface_invariance_residuals(&constant(1.0), &m, &samples, &mut rng).unwrap();
        assert_eq!((zero.nr1, zero.nr2, zero.nr3), (0.0, 0.0, 0.0));
        let bad = surface_invariance_residuals(&non_invariant(), &m, &samples, &mut rng).unwrap();
        assert!(bad.nr2 > 1e-3);
    }

    #[test]
    fn inadmissible_relabel_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = SurfaceSample::random(&mut rng, &EmbeddedSphere, &DVector::from_vec(vec![0.0, 0.0, 1.0]));
        let gens = SurfaceGenerators { relabel: Some((Vector3::zeros(), s.m * s.m.transpose())), ..Default::default() };
        assert!(matches!(nr_residuals(&constant(1.0), &EmbeddedSphere, &s, &gens), Err(Error::Input(_))));
    }

    #[test]
    fn lemma_trivial_cases() {
        let s = LevelSetSurface::sphere(Vector3::zeros(), 1.0).unwrap();
        let x = Vector3::new(0.6, 0.0, 0.8);
        let st = SurfaceStencil { h: 0.05 };
        let r = lemma_checks(&s, &x, &|_| Vector3::new(1.0, 2.0, 3.0), &|_| Matrix3::zeros(), &st).unwrap();
        assert!(r.lemma1 < 1e-14 && r.lemma2 < 1e-14 && !r.precondition_violation);
        let r = lemma_checks(&s, &x, &|y| *y, &|_| Matrix3::zeros(), &st).unwrap();
        assert!(r.precondition_violation);
    }
}
