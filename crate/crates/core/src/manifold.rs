//! Chart-based Riemannian manifolds hosting order-parameter values.
//!
//! Points are chart coordinates stored as `DVector<f64>`. Built-in models cover
//! Euclidean space, the circle, the two-sphere (spherical chart and embedded
//! unit vectors) and SO(3) in rotation-vector coordinates. User manifolds are
//! assembled from closures with [`CustomManifold`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::skew;

/// Distance from a singular chart locus below which points are rejected.
pub const CHART_MARGIN: f64 = 1e-8;

/// Default relative step for finite-difference Christoffel symbols.
pub const CHRISTOFFEL_STEP: f64 = 1e-5;

/// Lie groups whose actions on a manifold can be registered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupTag {
    /// Additive group of the model space itself.
    Translation,
    /// Rotations of the circle.
    U1,
    /// Spatial rotations.
    SO3,
}

impl GroupTag {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "translation" | "Translation" => Ok(Self::Translation),
            "U1" | "u1" => Ok(Self::U1),
            "SO3" | "so3" => Ok(Self::SO3),
            other => Err(Error::UnsupportedAction(format!("unknown group `{other}`"))),
        }
    }

    /// Dimension of the Lie algebra for a model space of dimension `dim`.
    pub fn algebra_dim(self, dim: usize) -> usize {
        match self {
            Self::Translation => dim,
            Self::U1 => 1,
            Self::SO3 => 3,
        }
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Translation => "translation",
            Self::U1 => "U1",
            Self::SO3 => "SO3",
        };
        f.write_str(s)
    }
}

/// Whether distances are reported as `d` or as the bounded `d / (1 + d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    #[default]
    Raw,
    Bounded,
}

impl DistanceMode {
    pub fn apply(self, d: f64) -> f64 {
        match self {
            Self::Raw => d,
            Self::Bounded => d / (1.0 + d),
        }
    }
}

/// Christoffel symbols `Γ^a_{bc}` stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.dim + b) * self.dim + c]
    }

    pub fn set(&mut self, a: usize, b: usize, c: usize, value: f64) {
        self.data[(a * self.dim + b) * self.dim + c] = value;
    }

    /// Contraction `Γ^a_{bc} u^b v^c`.
    pub fn contract(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |a, _| {
            let mut s = 0.0;
            for b in 0..n {
                for c in 0..n {
                    s += self.get(a, b, c) * u[b] * v[c];
                }
            }
            s
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Largest violation of `Γ^a_{bc} = Γ^a_{cb}`.
    pub fn lower_asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    worst = worst.max((self.get(a, b, c) - self.get(a, c, b)).abs());
                }
            }
        }
        worst
    }
}

/// A tangent vector in chart components at a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: DVector<f64>,
    pub components: DVector<f64>,
}

impl TangentVector {
    pub fn new(base: DVector<f64>, components: DVector<f64>) -> Result<Self> {
        if base.len() != components.len() && components.len() != 0 {
            return Err(Error::Input(format!(
                "tangent components have length {} but base point has {}",
                components.len(),
                base.len()
            )));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("tangent components must be finite".into()));
        }
        Ok(Self { base, components })
    }
}

/// A Riemannian manifold described through a single chart.
pub trait Manifold: Send + Sync {
    /// Scenario tag such as `"R^3"` or `"S2"`.
    fn tag(&self) -> String;

    fn dim(&self) -> usize;

    /// Chart metric `g(ν)`; callers wanting validation use [`checked_metric`].
    fn metric(&self, nu: &DVector<f64>) -> DMatrix<f64>;

    /// Rejects points outside the chart or within [`CHART_MARGIN`] of a singular locus.
    fn check_point(&self, nu: &DVector<f64>) -> Result<()> {
        check_len(self.dim(), nu)
    }

    fn analytic_distance(&self, _a: &DVector<f64>, _b: &DVector<f64>) -> Option<f64> {
        None
    }

    fn analytic_christoffel(&self, _nu: &DVector<f64>) -> Option<Christoffel> {
        None
    }

    /// Coordinate increment from `from` to `to`; periodic charts return the
    /// shortest representative.
    fn chart_difference(&self, from: &DVector<f64>, to: &DVector<f64>) -> DVector<f64> {
        to - from
    }

    /// Whether the chart is a global linear structure (integral balances of
    /// order-parameter quantities are only meaningful then).
    fn is_linear(&self) -> bool {
        false
    }

    fn groups(&self) -> Vec<GroupTag> {
        Vec::new()
    }

    /// Infinitesimal generator `ξ_M(ν)` without point validation.
    fn generator(&self, group: GroupTag, _xi: &DVector<f64>, _nu: &DVector<f64>) -> Result<DVector<f64>> {
        Err(unsupported(self, group))
    }

    /// Finite action `exp(ξ)·ν`.
    fn act(&self, group: GroupTag, _xi: &DVector<f64>, _nu: &DVector<f64>) -> Result<DVector<f64>> {
        Err(unsupported(self, group))
    }

    /// Chart Jacobian of `ν ↦ ξ_M(ν)` for fixed `ξ`.
    fn generator_jacobian(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = nu.clone();
        for c in 0..n {
            let h = 1e-6 * nu[c].abs().max(1.0);
            probe[c] = nu[c] + h;
            let fp = self.generator(group, xi, &probe)?;
            probe[c] = nu[c] - h;
            let fm = self.generator(group, xi, &probe)?;
            probe[c] = nu[c];
            jac.set_column(c, &((fp - fm) / (2.0 * h)));
        }
        Ok(jac)
    }

    /// Orthogonal projection of an ambient vector onto `T_νM` (identity for charts).
    fn project_tangent(&self, _nu: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v.clone()
    }

    /// Maps a perturbed point back onto the manifold.
    fn retract(&self, nu: &DVector<f64>) -> DVector<f64> {
        nu.clone()
    }

    /// Validated generator `ξ_M(ν)` as a tangent vector.
    fn action_generator(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<TangentVector> {
        if !self.groups().contains(&group) {
            return Err(unsupported(self, group));
        }
        self.check_point(nu)?;
        if xi.len() != group.algebra_dim(self.dim()) {
            return Err(Error::Input(format!(
                "algebra element for {group} must have length {}",
                group.algebra_dim(self.dim())
            )));
        }
        TangentVector::new(nu.clone(), self.generator(group, xi, nu)?)
    }
}

fn unsupported<M: Manifold + ?Sized>(m: &M, group: GroupTag) -> Error {
    Error::UnsupportedAction(format!("group {group} is not registered on {}", m.tag()))
}

fn check_len(dim: usize, nu: &DVector<f64>) -> Result<()> {
    if nu.len() != dim {
        return Err(Error::Input(format!("point has {} coordinates, manifold dimension is {dim}", nu.len())));
    }
    if nu.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("point coordinates must be finite".into()));
    }
    Ok(())
}

/// Metric at `ν` after checking it is symmetric positive-definite.
pub fn checked_metric(m: &dyn Manifold, nu: &DVector<f64>) -> Result<DMatrix<f64>> {
    let g = m.metric(nu);
    let scale = g.amax().max(1.0);
    if (&g - g.transpose()).amax() > 1e-12 * scale {
        return Err(Error::MetricDegenerate(format!("non-symmetric metric at {:?}", nu.as_slice())));
    }
    if g.clone().cholesky().is_none() {
        return Err(Error::MetricDegenerate(format!("metric not positive-definite at {:?}", nu.as_slice())));
    }
    Ok(g)
}

/// Christoffel symbols of the Levi-Civita connection: analytic when registered,
/// otherwise central differences with the default step.
pub fn christoffel(m: &dyn Manifold, nu: &DVector<f64>) -> Result<Christoffel> {
    m.check_point(nu)?;
    match m.analytic_christoffel(nu) {
        Some(gamma) => Ok(gamma),
        None => christoffel_fd(m, nu, CHRISTOFFEL_STEP),
    }
}

/// Christoffel symbols from central differences of the chart metric with
/// relative step `rel_step`.
pub fn christoffel_fd(m: &dyn Manifold, nu: &DVector<f64>, rel_step: f64) -> Result<Christoffel> {
    m.check_point(nu)?;
    let n = m.dim();
    let g = checked_metric(m, nu)?;
    let ginv = g
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::MetricDegenerate(format!("{:?}", nu.as_slice())))?;
    // dg[c] = ∂_c g
    let mut dg = Vec::with_capacity(n);
    let mut probe = nu.clone();
    for c in 0..n {
        let h = rel_step * nu[c].abs().max(1.0);
        probe[c] = nu[c] + h;
        m.check_point(&probe)
            .map_err(|_| Error::ChartSingularity(format!("finite-difference stencil leaves the chart at {:?}", nu.as_slice())))?;
        let gp = m.metric(&probe);
        probe[c] = nu[c] - h;
        m.check_point(&probe)
            .map_err(|_| Error::ChartSingularity(format!("finite-difference stencil leaves the chart at {:?}", nu.as_slice())))?;
        let gm = m.metric(&probe);
        probe[c] = nu[c];
        dg.push((gp - gm) / (2.0 * h));
    }
    let mut gamma = Christoffel::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in b..n {
                let mut s = 0.0;
                for d in 0..n {
                    s += ginv[(a, d)] * (dg[c][(b, d)] + dg[b][(c, d)] - dg[d][(b, c)]);
                }
                gamma.set(a, b, c, 0.5 * s);
                gamma.set(a, c, b, 0.5 * s);
            }
        }
    }
    Ok(gamma)
}

/// `ν̈^a = ∂_t ν̇^a + Γ^a_{bc} ν̇^b ν̇^c`.
pub fn covariant_acceleration(
    m: &dyn Manifold,
    nu: &DVector<f64>,
    nudot: &TangentVector,
    dt_nudot: &DVector<f64>,
) -> Result<TangentVector> {
    if nudot.base.len() != nu.len() || m.chart_difference(nu, &nudot.base).amax() > 1e-12 {
        return Err(Error::Input("velocity is not based at the given point".into()));
    }
    if dt_nudot.len() != m.dim() {
        return Err(Error::Input("time derivative has wrong dimension".into()));
    }
    let gamma = christoffel(m, nu)?;
    let acc = dt_nudot + gamma.contract(&nudot.components, &nudot.components);
    TangentVector::new(nu.clone(), acc)
}

/// Geodesic distance; analytic when registered, otherwise by shooting.
pub fn geodesic_distance(m: &dyn Manifold, a: &DVector<f64>, b: &DVector<f64>, mode: DistanceMode) -> Result<f64> {
    m.check_point(a)?;
    m.check_point(b)?;
    let d = match m.analytic_distance(a, b) {
        Some(d) => d,
        None => shooting_distance(m, a, b)?,
    };
    Ok(mode.apply(d))
}

const SHOOTING_STEPS: usize = 32;
const SHOOTING_MAX_ITER: usize = 200;

fn integrate_geodesic(m: &dyn Manifold, start: &DVector<f64>, v0: &DVector<f64>) -> Result<DVector<f64>> {
    let n = m.dim();
    let ds = 1.0 / SHOOTING_STEPS as f64;
    let rhs = |q: &DVector<f64>, v: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let gamma = christoffel(m, q)?;
        Ok((v.clone(), -gamma.contract(v, v)))
    };
    let mut q = start.clone();
    let mut v = v0.clone();
    for _ in 0..SHOOTING_STEPS {
        let (k1q, k1v) = rhs(&q, &v)?;
        let (k2q, k2v) = rhs(&(&q + &k1q * (0.5 * ds)), &(&v + &k1v * (0.5 * ds)))?;
        let (k3q, k3v) = rhs(&(&q + &k2q * (0.5 * ds)), &(&v + &k2v * (0.5 * ds)))?;
        let (k4q, k4v) = rhs(&(&q + &k3q * ds), &(&v + &k3v * ds))?;
        q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (ds / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (ds / 6.0);
    }
    debug_assert_eq!(q.len(), n);
    Ok(q)
}

/// Length of a geodesic from `a` to `b` found by single shooting: RK4
/// integration of the geodesic equation with a damped Newton iteration on the
/// initial velocity.
pub fn shooting_distance(m: &dyn Manifold, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    let n = m.dim();
    let mut v = m.chart_difference(a, b);
    if v.amax() == 0.0 {
        return Ok(0.0);
    }
    let miss = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let end = integrate_geodesic(m, a, v)?;
        Ok(m.chart_difference(b, &end))
    };
    let tol = 1e-11 * (1.0 + v.norm());
    let mut r = miss(&v).map_err(|e| Error::DistanceUnavailable(e.to_string()))?;
    for _ in 0..SHOOTING_MAX_ITER {
        if r.norm() < tol {
            let g = checked_metric(m, a)?;
            return Ok((v.transpose() * g * &v)[(0, 0)].max(0.0).sqrt());
        }
        let mut jac = DMatrix::zeros(n, n);
        for c in 0..n {
            let h = 1e-7 * v[c].abs().max(1.0);
            let mut vp = v.clone();
            vp[c] += h;
            let mut vm = v.clone();
            vm[c] -= h;
            let rp = miss(&vp).map_err(|e| Error::DistanceUnavailable(e.to_string()))?;
            let rm = miss(&vm).map_err(|e| Error::DistanceUnavailable(e.to_string()))?;
            jac.set_column(c, &((rp - rm) / (2.0 * h)));
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::DistanceUnavailable("singular shooting Jacobian".into()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &v - &step * lambda;
            if let Ok(rt) = miss(&trial) {
                if rt.norm() < r.norm() {
                    v = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::DistanceUnavailable("shooting made no progress".into()));
        }
    }
    Err(Error::DistanceUnavailable(format!("shooting did not converge in {SHOOTING_MAX_ITER} iterations")))
}

/// Trapezoidal length of a sampled curve: each segment contributes the mean of
/// the metric speed evaluated at its two endpoints.
pub fn curve_length(m: &dyn Manifold, samples: &[DVector<f64>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Input("curve length needs at least two samples".into()));
    }
    for s in samples {
        m.check_point(s)?;
    }
    let mut total = 0.0;
    for w in samples.windows(2) {
        let delta = m.chart_difference(&w[0], &w[1]);
        let speed = |p: &DVector<f64>| -> Result<f64> {
            let g = checked_metric(m, p)?;
            Ok((delta.transpose() * g * &delta)[(0, 0)].max(0.0).sqrt())
        };
        total += 0.5 * (speed(&w[0])? + speed(&w[1])?);
    }
    Ok(total)
}

/// Builds a built-in manifold from its scenario tag.
///
/// Accepted tags: `R^n`, `[a,b]` (closed interval), `S1` (arc distance),
/// `S1:chord`, `S2` (embedded unit vectors), `S2:chart` (spherical
/// coordinates) and `SO3`.
pub fn from_tag(tag: &str) -> Result<Arc<dyn Manifold>> {
    if let Some(n) = tag.strip_prefix("R^") {
        let n: usize = n.parse().map_err(|_| Error::Input(format!("bad Euclidean tag `{tag}`")))?;
        return Ok(Arc::new(Euclidean::new(n)?));
    }
    if let Some(inner) = tag.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
        let bad = || Error::Input(format!("bad interval tag `{tag}`"));
        let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        return Ok(Arc::new(Interval::new(lo, hi)?));
    }
    match tag {
        "R" => Ok(Arc::new(Euclidean::new(1)?)),
        "S1" => Ok(Arc::new(Circle::new(CircleDistance::Arc))),
        "S1:chord" => Ok(Arc::new(Circle::new(CircleDistance::Chord))),
        "S2" => Ok(Arc::new(EmbeddedSphere)),
        "S2:chart" => Ok(Arc::new(SphericalChart)),
        "SO3" => Ok(Arc::new(RotationVectors)),
        other => Err(Error::Input(format!("unknown manifold tag `{other}`"))),
    }
}

/// `ℝⁿ` with the flat metric and the translation group.
#[derive(Debug, Clone)]
pub struct Euclidean {
    n: usize,
}

impl Euclidean {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("Euclidean dimension must be positive".into()));
        }
        Ok(Self { n })
    }
}

impl Manifold for Euclidean {
    fn tag(&self) -> String {
        format!("R^{}", self.n)
    }
    fn dim(&self) -> usize {
        self.n
    }
    fn metric(&self, _nu: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }
    fn analytic_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
        Some((b - a).norm())
    }
    fn analytic_christoffel(&self, _nu: &DVector<f64>) -> Option<Christoffel> {
        Some(Christoffel::zeros(self.n))
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn groups(&self) -> Vec<GroupTag> {
        vec![GroupTag::Translation]
    }
    fn generator(&self, group: GroupTag, xi: &DVector<f64>, _nu: &DVector<f64>) -> Result<DVector<f64>> {
        match group {
            GroupTag::Translation => Ok(xi.clone()),
            _ => Err(unsupported(self, group)),
        }
    }
    fn act(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        match group {
            GroupTag::Translation => Ok(nu + xi),
            _ => Err(unsupported(self, group)),
        }
    }
    fn generator_jacobian(&self, _group: GroupTag, _xi: &DVector<f64>, _nu: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.n, self.n))
    }
}

/// Closed interval `[lo, hi]` of the real line, e.g. a volume fraction.
#[derive(Debug, Clone, Copy)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Input(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }
}

impl Manifold for Interval {
    fn tag(&self) -> String {
        format!("[{},{}]", self.lo, self.hi)
    }
    fn dim(&self) -> usize {
        1
    }
    fn metric(&self, _nu: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn check_point(&self, nu: &DVector<f64>) -> Result<()> {
        check_len(1, nu)?;
        if nu[0] < self.lo || nu[0] > self.hi {
            return Err(Error::Input(format!("{} lies outside [{}, {}]", nu[0], self.lo, self.hi)));
        }
        Ok(())
    }
    fn analytic_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
        Some((b[0] - a[0]).abs())
    }
    fn analytic_christoffel(&self, _nu: &DVector<f64>) -> Option<Christoffel> {
        Some(Christoffel::zeros(1))
    }
    fn retract(&self, nu: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, nu[0].clamp(self.lo, self.hi))
    }
}

/// Distance registered on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CircleDistance {
    /// Intrinsic arc length.
    Arc,
    /// Chord length of the unit circle in the plane, `√(2(1 − cos Δ))`.
    Chord,
}

/// The unit circle in its angle chart.
#[derive(Debug, Clone)]
pub struct Circle {
    distance: CircleDistance,
}

impl Circle {
    pub fn new(distance: CircleDistance) -> Self {
        Self { distance }
    }
}

/// Representative of `a` in `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

impl Manifold for Circle {
    fn tag(&self) -> String {
        match self.distance {
            CircleDistance::Arc => "S1".into(),
            CircleDistance::Chord => "S1:chord".into(),
        }
    }
    fn dim(&self) -> usize {
        1
    }
    fn metric(&self, _nu: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn analytic_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
        let delta = b[0] - a[0];
        Some(match self.distance {
            CircleDistance::Arc => wrap_angle(delta).abs(),
            CircleDistance::Chord => (2.0 * (1.0 - delta.cos())).max(0.0).sqrt(),
        })
    }
    fn analytic_christoffel(&self, _nu: &DVector<f64>) -> Option<Christoffel> {
        Some(Christoffel::zeros(1))
    }
    fn chart_difference(&self, from: &DVector<f64>, to: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, wrap_angle(to[0] - from[0]))
    }
    fn groups(&self) -> Vec<GroupTag> {
        vec![GroupTag::U1]
    }
    fn generator(&self, group: GroupTag, xi: &DVector<f64>, _nu: &DVector<f64>) -> Result<DVector<f64>> {
        match group {
            GroupTag::U1 => Ok(xi.clone()),
            _ => Err(unsupported(self, group)),
        }
    }
    fn act(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        match group {
            GroupTag::U1 => Ok(nu + xi),
            _ => Err(unsupported(self, group)),
        }
    }
    fn generator_jacobian(&self, _group: GroupTag, _xi: &DVector<f64>, _nu: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(1, 1))
    }
}

/// Unit vector of spherical coordinates `(θ, φ)`.
pub fn spherical_to_unit(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Spherical coordinates `(θ, φ)` of a nonzero vector, `φ ∈ (−π, π]`.
pub fn unit_to_spherical(n: &Vector3<f64>) -> (f64, f64) {
    let r = n.norm();
    ((n[2] / r).clamp(-1.0, 1.0).acos(), n[1].atan2(n[0]))
}

fn great_circle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// S² in spherical coordinates `(θ, φ)` with `g = diag(1, sin²θ)`.
#[derive(Debug, Clone, Copy)]
pub struct SphericalChart;

impl SphericalChart {
    pub fn to_unit(nu: &DVector<f64>) -> Vector3<f64> {
        spherical_to_unit(nu[0], nu[1])
    }

    /// Chart point of unit vector `n`, choosing `φ` closest to `phi_ref`.
    pub fn from_unit(n: &Vector3<f64>, phi_ref: f64) -> DVector<f64> {
        let (theta, phi) = unit_to_spherical(n);
        DVector::from_vec(vec![theta, phi_ref + wrap_angle(phi - phi_ref)])
    }

    /// Chart components of an ambient tangent vector at `ν`.
    fn chart_components(nu: &DVector<f64>, t: &Vector3<f64>) -> DVector<f64> {
        let (th, ph) = (nu[0], nu[1]);
        let e_theta = Vector3::new(th.cos() * ph.cos(), th.cos() * ph.sin(), -th.sin());
        let e_phi = Vector3::new(-ph.sin(), ph.cos(), 0.0);
        DVector::from_vec(vec![t.dot(&e_theta), t.dot(&e_phi) / th.sin()])
    }
}

impl Manifold for SphericalChart {
    fn tag(&self) -> String {
        "S2:chart".into()
    }
    fn dim(&self) -> usize {
        2
    }
    fn metric(&self, nu: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, nu[0].sin().powi(2)]))
    }
    fn check_point(&self, nu: &DVector<f64>) -> Result<()> {
        check_len(2, nu)?;
        if nu[0] <= CHART_MARGIN || nu[0] >= PI - CHART_MARGIN {
            return Err(Error::ChartSingularity(format!("θ = {} is at a pole of the spherical chart", nu[0])));
        }
        Ok(())
    }
    fn analytic_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
        Some(great_circle(&Self::to_unit(a), &Self::to_unit(b)))
    }
    fn analytic_christoffel(&self, nu: &DVector<f64>) -> Option<Christoffel> {
        let (s, c) = nu[0].sin_cos();
        let mut g = Christoffel::zeros(2);
        g.set(0, 1, 1, -s * c);
        g.set(1, 0, 1, c / s);
        g.set(1, 1, 0, c / s);
        Some(g)
    }
    fn chart_difference(&self, from: &DVector<f64>, to: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![to[0] - from[0], wrap_angle(to[1] - from[1])])
    }
    fn groups(&self) -> Vec<GroupTag> {
        vec![GroupTag::SO3]
    }
    fn generator(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        if group != GroupTag::SO3 {
            return Err(unsupported(self, group));
        }
        let q = Vector3::new(xi[0], xi[1], xi[2]);
        Ok(Self::chart_components(nu, &q.cross(&Self::to_unit(nu))))
    }
    fn act(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        if group != GroupTag::SO3 {
            return Err(unsupported(self, group));
        }
        let rot = Rotation3::from_scaled_axis(Vector3::new(xi[0], xi[1], xi[2]));
        Ok(Self::from_unit(&(rot * Self::to_unit(nu)), nu[1]))
    }
}

/// S² as unit vectors in ℝ³ with the induced metric. Rotations act by
/// `ξ_M(ν) = q̇ × ν`, i.e. `𝒜 = −ν∧`.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddedSphere;

fn vec3(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn dvec3(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

impl Manifold for EmbeddedSphere {
    fn tag(&self) -> String {
        "S2".into()
    }
    fn dim(&self) -> usize {
        3
    }
    fn metric(&self, _nu: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(3, 3)
    }
    fn check_point(&self, nu: &DVector<f64>) -> Result<()> {
        check_len(3, nu)?;
        if (nu.norm() - 1.0).abs() > CHART_MARGIN {
            return Err(Error::Input(format!("|ν| = {} is not a unit vector", nu.norm())));
        }
        Ok(())
    }
    fn analytic_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
        Some(great_circle(&vec3(a), &vec3(b)))
    }
    fn analytic_christoffel(&self, _nu: &DVector<f64>) -> Option<Christoffel> {
        Some(Christoffel::zeros(3))
    }
    fn groups(&self) -> Vec<GroupTag> {
        vec![GroupTag::SO3]
    }
    fn generator(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        if group != GroupTag::SO3 {
            return Err(unsupported(self, group));
        }
        Ok(dvec3(&vec3(xi).cross(&vec3(nu))))
    }
    fn act(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        if group != GroupTag::SO3 {
            return Err(unsupported(self, group));
        }
        Ok(dvec3(&(Rotation3::from_scaled_axis(vec3(xi)) * vec3(nu))))
    }
    fn generator_jacobian(&self, group: GroupTag, xi: &DVector<f64>, _nu: &DVector<f64>) -> Result<DMatrix<f64>> {
        if group != GroupTag::SO3 {
            return Err(unsupported(self, group));
        }
        let k = skew(&vec3(xi));
        Ok(DMatrix::from_fn(3, 3, |i, j| k[(i, j)]))
    }
    fn project_tangent(&self, nu: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let n = nu / nu.norm();
        v - &n * n.dot(v)
    }
    fn retract(&self, nu: &DVector<f64>) -> DVector<f64> {
        nu / nu.norm()
    }
}

/// SO(3) in rotation-vector coordinates `r` with `|r| < π`, carrying the
/// bi-invariant metric `J_lᵀ J_l` and acted on by left multiplication.
#[derive(Debug, Clone, Copy)]
pub struct RotationVectors;

/// Left Jacobian of the exponential map: `ω = J_l(r) ṙ` for `R = exp([r]×)`.
pub fn left_jacobian(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(r);
    if theta < 1e-5 {
        return Matrix3::identity() + k * 0.5 + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() + k * ((1.0 - theta.cos()) / t2) + k * k * ((theta - theta.sin()) / (t2 * theta))
}

impl Manifold for RotationVectors {
    fn tag(&self) -> String {
        "SO3".into()
    }
    fn dim(&self) -> usize {
        3
    }
    fn metric(&self, nu: &DVector<f64>) -> DMatrix<f64> {
        let j = left_jacobian(&vec3(nu));
        let g = j.transpose() * j;
        DMatrix::from_fn(3, 3, |a, b| g[(a, b)])
    }
    fn check_point(&self, nu: &DVector<f64>) -> Result<()> {
        check_len(3, nu)?;
        if nu.norm() >= PI - CHART_MARGIN {
            return Err(Error::ChartSingularity(format!("rotation angle {} reaches π", nu.norm())));
        }
        Ok(())
    }
    fn analytic_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
        let ra = Rotation3::from_scaled_axis(vec3(a));
        let rb = Rotation3::from_scaled_axis(vec3(b));
        Some((rb * ra.inverse()).angle())
    }
    fn groups(&self) -> Vec<GroupTag> {
        vec![GroupTag::SO3]
    }
    fn generator(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        if group != GroupTag::SO3 {
            return Err(unsupported(self, group));
        }
        let j = left_jacobian(&vec3(nu));
        let rdot = j
            .try_inverse()
            .ok_or_else(|| Error::ChartSingularity("left Jacobian is singular".into()))?
            * vec3(xi);
        Ok(dvec3(&rdot))
    }
    fn act(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        if group != GroupTag::SO3 {
            return Err(unsupported(self, group));
        }
        let r = Rotation3::from_scaled_axis(vec3(xi)) * Rotation3::from_scaled_axis(vec3(nu));
        Ok(dvec3(&r.scaled_axis()))
    }
}

type MetricFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type DistanceFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
type BoundsFn = dyn Fn(&DVector<f64>) -> bool + Send + Sync;
type GeneratorFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// A manifold assembled from user closures.
#[derive(Clone)]
pub struct CustomManifold {
    name: String,
    dim: usize,
    metric: Arc<MetricFn>,
    distance: Option<Arc<DistanceFn>>,
    bounds: Option<Arc<BoundsFn>>,
    generators: Vec<(GroupTag, Arc<GeneratorFn>)>,
    linear: bool,
}

impl fmt::Debug for CustomManifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomManifold").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

impl CustomManifold {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        metric: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            metric: Arc::new(metric),
            distance: None,
            bounds: None,
            generators: Vec::new(),
            linear: false,
        }
    }

    pub fn with_distance(mut self, d: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.distance = Some(Arc::new(d));
        self
    }

    /// Predicate returning `true` for valid chart points.
    pub fn with_bounds(mut self, b: impl Fn(&DVector<f64>) -> bool + Send + Sync + 'static) -> Self {
        self.bounds = Some(Arc::new(b));
        self
    }

    pub fn with_action(
        mut self,
        group: GroupTag,
        generator: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.generators.push((group, Arc::new(generator)));
        self
    }

    pub fn linear(mut self, linear: bool) -> Self {
        self.linear = linear;
        self
    }
}

impl Manifold for CustomManifold {
    fn tag(&self) -> String {
        self.name.clone()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn metric(&self, nu: &DVector<f64>) -> DMatrix<f64> {
        (self.metric)(nu)
    }
    fn check_point(&self, nu: &DVector<f64>) -> Result<()> {
        check_len(self.dim, nu)?;
        match &self.bounds {
            Some(b) if !b(nu) => Err(Error::ChartSingularity(format!("{:?} outside chart of {}", nu.as_slice(), self.name))),
            _ => Ok(()),
        }
    }
    fn analytic_distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
        self.distance.as_ref().map(|d| d(a, b))
    }
    fn is_linear(&self) -> bool {
        self.linear
    }
    fn groups(&self) -> Vec<GroupTag> {
        self.generators.iter().map(|(g, _)| *g).collect()
    }
    fn generator(&self, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        self.generators
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, f)| f(xi, nu))
            .ok_or_else(|| unsupported(self, group))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn euclidean_christoffel_vanishes() {
        let m = Euclidean::new(3).unwrap();
        let g = christoffel_fd(&m, &p(&[0.3, -1.0, 2.0]), CHRISTOFFEL_STEP).unwrap();
        assert_eq!(g.max_abs_diff(&Christoffel::zeros(3)), 0.0);
    }

    #[test]
    fn sphere_chart_christoffel_closed_form() {
        let nu = p(&[PI / 3.0, 0.0]);
        let g = christoffel(&SphericalChart, &nu).unwrap();
        assert!((g.get(0, 1, 1) + (PI / 3.0).sin() * (PI / 3.0).cos()).abs() < 1e-15);
        assert!((g.get(1, 0, 1) - 1.0 / (PI / 3.0).tan()).abs() < 1e-15);
        let fd = christoffel_fd(&SphericalChart, &nu, CHRISTOFFEL_STEP).unwrap();
        assert!(fd.max_abs_diff(&g) < 1e-8);
        assert!(fd.lower_asymmetry() == 0.0);
    }

    #[test]
    fn pole_is_rejected() {
        let err = christoffel(&SphericalChart, &p(&[0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::ChartSingularity(_)));
    }

    #[test]
    fn degenerate_custom_metric_is_reported() {
        let m = CustomManifold::new("flat-degenerate", 2, |_| DMatrix::from_diagonal(&p(&[1.0, 0.0])));
        assert!(matches!(christoffel(&m, &p(&[0.0, 0.0])), Err(Error::MetricDegenerate(_))));
    }

    #[test]
    fn covariant_acceleration_examples() {
        let m = SphericalChart;
        let nu = p(&[PI / 2.0, 0.0]);
        let v = TangentVector::new(nu.clone(), p(&[0.0, 3.0])).unwrap();
        let a = covariant_acceleration(&m, &nu, &v, &p(&[0.0, 0.0])).unwrap();
        assert!(a.components[0].abs() < 1e-15);
        let nu = p(&[PI / 4.0, 0.0]);
        let v = TangentVector::new(nu.clone(), p(&[0.0, 1.0])).unwrap();
        let a = covariant_acceleration(&m, &nu, &v, &p(&[0.0, 0.0])).unwrap();
        assert!((a.components[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn distances_and_bounded_mode() {
        let r = Euclidean::new(1).unwrap();
        assert_eq!(geodesic_distance(&r, &p(&[0.0]), &p(&[1.0]), DistanceMode::Raw).unwrap(), 1.0);
        assert_eq!(geodesic_distance(&r, &p(&[0.0]), &p(&[1.0]), DistanceMode::Bounded).unwrap(), 0.5);
        let s = EmbeddedSphere;
        let d = geodesic_distance(&s, &p(&[0.0, 0.0, 1.0]), &p(&[0.0, 0.0, -1.0]), DistanceMode::Raw).unwrap();
        assert!((d - PI).abs() < 1e-15);
        let db = geodesic_distance(&s, &p(&[0.0, 0.0, 1.0]), &p(&[0.0, 0.0, -1.0]), DistanceMode::Bounded).unwrap();
        assert!((db - PI / (1.0 + PI)).abs() < 1e-15);
    }

    #[test]
    fn circle_difference_unwraps_seam() {
        let c = Circle::new(CircleDistance::Arc);
        let d = c.chart_difference(&p(&[PI - 0.1]), &p(&[-PI + 0.1]));
        assert!((d[0] - 0.2).abs() < 1e-14);
        assert!((c.analytic_distance(&p(&[PI - 0.1]), &p(&[-PI + 0.1])).unwrap() - 0.2).abs() < 1e-14);
    }

    #[test]
    fn shooting_matches_great_circle_on_chart() {
        let m = SphericalChart;
        let a = p(&[1.0, 0.2]);
        let b = p(&[2.0, 1.4]);
        let exact = m.analytic_distance(&a, &b).unwrap();
        let shot = shooting_distance(&m, &a, &b).unwrap();
        assert!((exact - shot).abs() < 1e-6, "{exact} vs {shot}");
    }

    #[test]
    fn shooting_on_custom_metric_without_distance() {
        // Hyperbolic upper half-plane: d((0,1),(0,e)) = 1.
        let m = CustomManifold::new("H2", 2, |v| DMatrix::identity(2, 2) / (v[1] * v[1])).with_bounds(|v| v[1] > 0.0);
        let d = geodesic_distance(&m, &p(&[0.0, 1.0]), &p(&[0.0, 1f64.exp()]), DistanceMode::Raw).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn curve_length_examples() {
        let r = Euclidean::new(1).unwrap();
        let seg: Vec<_> = (0..101).map(|i| p(&[i as f64 / 100.0])).collect();
        assert!((curve_length(&r, &seg).unwrap() - 1.0).abs() < 1e-12);
        let arc: Vec<_> = (0..200).map(|i| p(&[PI / 2.0, PI / 2.0 * i as f64 / 199.0])).collect();
        assert!((curve_length(&SphericalChart, &arc).unwrap() - PI / 2.0).abs() < 1e-4);
        assert!(curve_length(&r, &seg[..1]).is_err());
    }

    #[test]
    fn generators() {
        let s = EmbeddedSphere;
        let g = s.action_generator(GroupTag::SO3, &p(&[0.0, 0.0, 1.0]), &p(&[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(g.components.norm(), 0.0);
        let g = s.action_generator(GroupTag::SO3, &p(&[0.0, 0.0, 1.0]), &p(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(g.components, p(&[0.0, 1.0, 0.0]));
        let r = Euclidean::new(2).unwrap();
        let g = r.action_generator(GroupTag::Translation, &p(&[1.0, 2.0]), &p(&[5.0, 5.0])).unwrap();
        assert_eq!(g.components, p(&[1.0, 2.0]));
        assert!(matches!(
            r.action_generator(GroupTag::SO3, &p(&[1.0, 0.0, 0.0]), &p(&[0.0, 0.0])),
            Err(Error::UnsupportedAction(_))
        ));
    }

    #[test]
    fn chart_generator_matches_embedded_generator() {
        let nu = p(&[1.1, 0.4]);
        let xi = p(&[0.3, -0.2, 0.9]);
        let chart = SphericalChart.generator(GroupTag::SO3, &xi, &nu).unwrap();
        let eps = 1e-6;
        let plus = SphericalChart.act(GroupTag::SO3, &(&xi * eps), &nu).unwrap();
        let minus = SphericalChart.act(GroupTag::SO3, &(&xi * -eps), &nu).unwrap();
        let fd = (plus - minus) / (2.0 * eps);
        assert!((chart - fd).amax() < 1e-8);
    }

    #[test]
    fn so3_generator_matches_finite_action() {
        let m = RotationVectors;
        let r = p(&[0.4, -0.7, 1.2]);
        let xi = p(&[0.1, 0.5, -0.3]);
        let gen = m.generator(GroupTag::SO3, &xi, &r).unwrap();
        let eps = 1e-6;
        let fd = (m.act(GroupTag::SO3, &(&xi * eps), &r).unwrap() - m.act(GroupTag::SO3, &(&xi * -eps), &r).unwrap()) / (2.0 * eps);
        assert!((gen - fd).amax() < 1e-8);
        // Metric speed of the generator equals |ξ| for a bi-invariant metric.
        let g = m.metric(&r);
        let v = m.generator(GroupTag::SO3, &xi, &r).unwrap();
        assert!(((v.transpose() * g * &v)[(0, 0)].sqrt() - xi.norm()).abs() < 1e-12);
    }

    #[test]
    fn tags_round_trip() {
        for tag in ["R^3", "[0,1]", "S1", "S1:chord", "S2", "S2:chart", "SO3"] {
            assert_eq!(from_tag(tag).unwrap().tag(), tag);
        }
        assert!(from_tag("T2").is_err());
    }
}
