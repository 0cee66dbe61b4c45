//! Reference body grids, placement and order-parameter fields, their gradients,
//! rates and strain measures.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::linear::{fd_jacobian3, Linear};
use crate::manifold::{GroupTag, Manifold};

/// Uniform Cartesian grid over an axis-aligned box of the reference body.
///
/// Axes with a single node are inactive: the body is homogeneous along them,
/// the node sits at the midpoint and quadrature weights carry the full
/// thickness.
#[derive(Debug, Clone)]
pub struct BodyGrid {
    lower: [f64; 3],
    upper: [f64; 3],
    counts: [usize; 3],
    rho0: Vec<f64>,
    gamma: Vec<Matrix3<f64>>,
    quadrature: Quadrature,
}

/// Node-lattice quadrature rule used for integrals over the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Composite Simpson rule; needs an even number of intervals on every active axis.
    Simpson,
}

impl BodyGrid {
    pub fn new(lower: [f64; 3], upper: [f64; 3], counts: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(upper[a] > lower[a]) || !lower[a].is_finite() || !upper[a].is_finite() {
                return Err(Error::Input(format!("axis {a}: box extent must be positive and finite")));
            }
            if counts[a] == 0 || counts[a] == 2 {
                return Err(Error::Input(format!(
                    "axis {a}: need 1 node (inactive) or at least 3 nodes, got {}",
                    counts[a]
                )));
            }
        }
        let n = counts.iter().product();
        Ok(Self {
            lower,
            upper,
            counts,
            rho0: vec![1.0; n],
            gamma: vec![Matrix3::identity(); n],
            quadrature: Quadrature::Trapezoid,
        })
    }

    /// Grid with spacing as close as possible to `h` on every active axis.
    pub fn with_spacing(lower: [f64; 3], upper: [f64; 3], h: f64, active: [bool; 3]) -> Result<Self> {
        let mut counts = [1; 3];
        for a in 0..3 {
            if active[a] {
                counts[a] = (((upper[a] - lower[a]) / h).round() as usize).max(2) + 1;
            }
        }
        Self::new(lower, upper, counts)
    }

    pub fn with_density(mut self, rho: impl Fn(&Vector3<f64>) -> f64) -> Result<Self> {
        for i in 0..self.len() {
            let v = rho(&self.coords(i));
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Input(format!("density must be positive at node {i}, got {v}")));
            }
            self.rho0[i] = v;
        }
        Ok(self)
    }

    pub fn with_uniform_density(self, rho: f64) -> Result<Self> {
        self.with_density(|_| rho)
    }

    pub fn with_material_metric(mut self, gamma: impl Fn(&Vector3<f64>) -> Matrix3<f64>) -> Result<Self> {
        for i in 0..self.len() {
            let g = gamma(&self.coords(i));
            if (g - g.transpose()).amax() > 1e-12 * g.amax().max(1.0) || g.cholesky().is_none() {
                return Err(Error::Input(format!("material metric is not symmetric positive-definite at node {i}")));
            }
            self.gamma[i] = g;
        }
        Ok(self)
    }

    pub fn with_quadrature(mut self, rule: Quadrature) -> Result<Self> {
        if rule == Quadrature::Simpson {
            for a in 0..3 {
                if self.is_active(a) && (self.counts[a] - 1) % 2 != 0 {
                    return Err(Error::Input(format!("Simpson quadrature needs an even interval count on axis {a}")));
                }
            }
        }
        self.quadrature = rule;
        Ok(self)
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    pub fn len(&self) -> usize {
        self.rho0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho0.is_empty()
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn lower(&self) -> [f64; 3] {
        self.lower
    }

    pub fn upper(&self) -> [f64; 3] {
        self.upper
    }

    pub fn is_active(&self, axis: usize) -> bool {
        self.counts[axis] > 1
    }

    /// Node spacing along an active axis; the box thickness for inactive axes.
    pub fn spacing(&self, axis: usize) -> f64 {
        let w = self.upper[axis] - self.lower[axis];
        if self.is_active(axis) {
            w / (self.counts[axis] - 1) as f64
        } else {
            w
        }
    }

    pub fn rho0(&self, node: usize) -> f64 {
        self.rho0[node]
    }

    pub fn gamma(&self, node: usize) -> &Matrix3<f64> {
        &self.gamma[node]
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.counts[0] * (ijk[1] + self.counts[1] * ijk[2])
    }

    pub fn ijk(&self, node: usize) -> [usize; 3] {
        let i = node % self.counts[0];
        let rest = node / self.counts[0];
        [i, rest % self.counts[1], rest / self.counts[1]]
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        if self.is_active(axis) {
            if i + 1 == self.counts[axis] {
                self.upper[axis]
            } else {
                self.lower[axis] + i as f64 * self.spacing(axis)
            }
        } else {
            0.5 * (self.lower[axis] + self.upper[axis])
        }
    }

    pub fn coords(&self, node: usize) -> Vector3<f64> {
        let ijk = self.ijk(node);
        Vector3::new(self.axis_coord(0, ijk[0]), self.axis_coord(1, ijk[1]), self.axis_coord(2, ijk[2]))
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> {
        0..self.len()
    }

    /// Product quadrature weight of a node under the grid's rule.
    pub fn weight(&self, node: usize) -> f64 {
        let ijk = self.ijk(node);
        (0..3)
            .map(|a| {
                let h = self.spacing(a);
                if !self.is_active(a) {
                    return h;
                }
                let end = ijk[a] == 0 || ijk[a] + 1 == self.counts[a];
                match self.quadrature {
                    Quadrature::Trapezoid => {
                        if end {
                            0.5 * h
                        } else {
                            h
                        }
                    }
                    Quadrature::Simpson => {
                        if end {
                            h / 3.0
                        } else if ijk[a] % 2 == 1 {
                            4.0 * h / 3.0
                        } else {
                            2.0 * h / 3.0
                        }
                    }
                }
            })
            .product()
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.upper[a] - self.lower[a]).product()
    }

    /// Whether the node lies on a face of the box along an active axis.
    pub fn on_boundary(&self, node: usize) -> bool {
        let ijk = self.ijk(node);
        (0..3).any(|a| self.is_active(a) && (ijk[a] == 0 || ijk[a] + 1 == self.counts[a]))
    }

    /// Euclidean distance from a node to the boundary along active axes.
    pub fn boundary_distance(&self, node: usize) -> f64 {
        let x = self.coords(node);
        (0..3)
            .filter(|&a| self.is_active(a))
            .map(|a| (x[a] - self.lower[a]).min(self.upper[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Diameter of the active part of the box.
    pub fn diameter(&self) -> f64 {
        (0..3)
            .filter(|&a| self.is_active(a))
            .map(|a| (self.upper[a] - self.lower[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Nodes at least `depth` index steps away from every active face.
    pub fn interior_nodes(&self, depth: usize) -> Vec<usize> {
        self.nodes()
            .filter(|&n| {
                let ijk = self.ijk(n);
                (0..3).all(|a| !self.is_active(a) || (ijk[a] >= depth && ijk[a] + depth < self.counts[a]))
            })
            .collect()
    }

    /// Whether the node sits on a declared Dirichlet face.
    pub fn on_faces(&self, node: usize, faces: &[Face]) -> bool {
        let ijk = self.ijk(node);
        faces.iter().any(|f| {
            self.is_active(f.axis) && if f.upper { ijk[f.axis] + 1 == self.counts[f.axis] } else { ijk[f.axis] == 0 }
        })
    }

    /// Second-order difference stencil `(node, coefficient)` for `∂/∂X_axis`:
    /// central in the interior and one-sided three-point at the faces.
    pub fn stencil(&self, node: usize, axis: usize) -> Vec<(usize, f64)> {
        if !self.is_active(axis) {
            return Vec::new();
        }
        let ijk = self.ijk(node);
        let i = ijk[axis];
        let n = self.counts[axis];
        let h = self.spacing(axis);
        let at = |k: usize| {
            let mut p = ijk;
            p[axis] = k;
            self.index(p)
        };
        if i == 0 {
            vec![(at(0), -1.5 / h), (at(1), 2.0 / h), (at(2), -0.5 / h)]
        } else if i + 1 == n {
            vec![(at(n - 1), 1.5 / h), (at(n - 2), -2.0 / h), (at(n - 3), 0.5 / h)]
        } else {
            vec![(at(i - 1), -0.5 / h), (at(i + 1), 0.5 / h)]
        }
    }

    /// Stencil that never straddles a declared kink plane on `axis`.
    ///
    /// Nodes lying on a kink get the mean of the two one-sided derivatives.
    pub fn stencil_avoiding(&self, node: usize, axis: usize, kinks: &[f64]) -> Vec<(usize, f64)> {
        if !self.is_active(axis) || kinks.is_empty() {
            return self.stencil(node, axis);
        }
        let ijk = self.ijk(node);
        let i = ijk[axis];
        let n = self.counts[axis];
        let h = self.spacing(axis);
        let x = self.axis_coord(axis, i);
        let tol = 1e-9 * h;
        let at = |k: usize| {
            let mut p = ijk;
            p[axis] = k;
            self.index(p)
        };
        // Number of steps (at most 2) that can be taken from node i in
        // direction `dir` without the span containing a kink in its interior.
        let reach = |dir: isize| -> usize {
            let mut steps = 0;
            while steps < 2 {
                let next = i as isize + dir * (steps as isize + 1);
                if next < 0 || next >= n as isize {
                    break;
                }
                let prev = self.axis_coord(axis, (i as isize + dir * steps as isize) as usize);
                let far = self.axis_coord(axis, next as usize);
                let (lo, hi) = (prev.min(far), prev.max(far));
                let blocked = kinks
                    .iter()
                    .any(|&k| (k > lo + tol && k < hi - tol) || (steps > 0 && (k - prev).abs() <= tol));
                if blocked {
                    break;
                }
                steps += 1;
            }
            steps
        };
        let fwd = reach(1);
        let bwd = reach(-1);
        let one_sided = |dir: isize, len: usize| -> Vec<(usize, f64)> {
            let s = dir as f64;
            let k = |m: usize| at((i as isize + dir * m as isize) as usize);
            if len >= 2 {
                vec![(k(0), -1.5 * s / h), (k(1), 2.0 * s / h), (k(2), -0.5 * s / h)]
            } else {
                vec![(k(0), -s / h), (k(1), s / h)]
            }
        };
        let on_kink = kinks.iter().any(|&k| (k - x).abs() <= tol);
        if on_kink && fwd > 0 && bwd > 0 {
            let mut st = one_sided(1, fwd);
            for (idx, c) in one_sided(-1, bwd) {
                st.push((idx, c));
            }
            return st.into_iter().map(|(idx, c)| (idx, 0.5 * c)).collect();
        }
        if fwd >= 1 && bwd >= 1 {
            return vec![(at(i - 1), -0.5 / h), (at(i + 1), 0.5 / h)];
        }
        if fwd > 0 {
            one_sided(1, fwd)
        } else if bwd > 0 {
            one_sided(-1, bwd)
        } else {
            Vec::new()
        }
    }

    /// Derivative of a vector-space valued nodal field along `axis`.
    pub fn derivative<T: Linear>(&self, values: &[T], node: usize, axis: usize) -> T {
        let mut out = values[node].zero_like();
        for (k, c) in self.stencil(node, axis) {
            out.axpy(c, &values[k]);
        }
        out
    }

    /// `∇a` of a scalar nodal field.
    pub fn gradient_scalar(&self, values: &[f64], node: usize) -> Vector3<f64> {
        Vector3::new(self.derivative(values, node, 0), self.derivative(values, node, 1), self.derivative(values, node, 2))
    }

    /// `Div u = ∂_A u_A` of a material vector field.
    pub fn divergence_vector(&self, values: &[Vector3<f64>], node: usize) -> f64 {
        (0..3)
            .filter(|&a| self.is_active(a))
            .map(|a| self.stencil(node, a).iter().map(|&(k, c)| c * values[k][a]).sum::<f64>())
            .sum()
    }

    /// Row divergence `(Div T)_i = ∂_A T_iA` of a two-point tensor field.
    pub fn divergence_tensor(&self, values: &[Matrix3<f64>], node: usize) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for a in (0..3).filter(|&a| self.is_active(a)) {
            for (k, c) in self.stencil(node, a) {
                out += values[k].column(a) * c;
            }
        }
        out
    }

    /// Row divergence of a `dim × 3` field such as the microstress.
    pub fn divergence_rows(&self, values: &[DMatrix<f64>], node: usize) -> DVector<f64> {
        let mut out = DVector::zeros(values[node].nrows());
        for a in (0..3).filter(|&a| self.is_active(a)) {
            for (k, c) in self.stencil(node, a) {
                out += values[k].column(a) * c;
            }
        }
        out
    }

    pub fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.len() {
            return Err(Error::Input(format!("{what} has {len} nodes, grid has {}", self.len())));
        }
        Ok(())
    }
}

/// A face of the grid box: `axis` and lower/upper side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

/// Current placement `x(X)` sampled at grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementField {
    pub values: Vec<Vector3<f64>>,
}

impl PlacementField {
    pub fn from_fn(grid: &BodyGrid, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self { values: grid.nodes().map(|n| f(&grid.coords(n))).collect() }
    }

    pub fn identity(grid: &BodyGrid) -> Self {
        Self::from_fn(grid, |x| *x)
    }
}

/// Order-parameter field: nodal chart coordinates on a manifold.
#[derive(Clone)]
pub struct OrderField {
    pub manifold: Arc<dyn Manifold>,
    pub values: Vec<DVector<f64>>,
    /// Planes `X_axis = c` across which the field is known to have a kink.
    pub kinks: Vec<KinkPlane>,
}

/// Plane `X_axis = offset` along which gradients are taken one-sidedly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinkPlane {
    pub axis: usize,
    pub offset: f64,
}

impl std::fmt::Debug for OrderField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OrderField")
            .field("manifold", &self.manifold.tag())
            .field("nodes", &self.values.len())
            .field("kinks", &self.kinks)
            .finish()
    }
}

impl OrderField {
    pub fn new(manifold: Arc<dyn Manifold>, values: Vec<DVector<f64>>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            manifold
                .check_point(v)
                .map_err(|e| Error::Input(format!("order parameter at node {i}: {e}")))?;
        }
        Ok(Self { manifold, values, kinks: Vec::new() })
    }

    pub fn from_fn(
        grid: &BodyGrid,
        manifold: Arc<dyn Manifold>,
        f: impl Fn(&Vector3<f64>) -> DVector<f64>,
    ) -> Result<Self> {
        Self::new(manifold, grid.nodes().map(|n| f(&grid.coords(n))).collect())
    }

    pub fn with_kinks(mut self, kinks: Vec<KinkPlane>) -> Self {
        self.kinks = kinks;
        self
    }
}

/// `F = ∇x` at every node; inactive axes contribute the unit column `e_A`.
pub fn deformation_gradient(grid: &BodyGrid, placement: &PlacementField) -> Result<Vec<Matrix3<f64>>> {
    grid.check_len(placement.values.len(), "placement")?;
    let mut out = Vec::with_capacity(grid.len());
    for node in grid.nodes() {
        let mut f = Matrix3::zeros();
        for a in 0..3 {
            let col = if grid.is_active(a) {
                grid.derivative(&placement.values, node, a)
            } else {
                Vector3::ith(a, 1.0)
            };
            f.set_column(a, &col);
        }
        let det = f.determinant();
        if !(det > 0.0) {
            return Err(Error::Orientation { node, det });
        }
        out.push(f);
    }
    Ok(out)
}

/// `∇ν` (dim × 3) in chart coordinates; increments go through the manifold's
/// chart difference so periodic charts are unwrapped.
pub fn order_gradient(grid: &BodyGrid, field: &OrderField) -> Result<Vec<DMatrix<f64>>> {
    grid.check_len(field.values.len(), "order field")?;
    let dim = field.manifold.dim();
    let mut out = Vec::with_capacity(grid.len());
    for node in grid.nodes() {
        let mut g = DMatrix::zeros(dim, 3);
        for a in 0..3 {
            let kinks: Vec<f64> = field.kinks.iter().filter(|k| k.axis == a).map(|k| k.offset).collect();
            let stencil = grid.stencil_avoiding(node, a, &kinks);
            let mut col = DVector::zeros(dim);
            for (k, c) in stencil {
                if k != node {
                    col += field.manifold.chart_difference(&field.values[node], &field.values[k]) * c;
                }
            }
            g.set_column(a, &col);
        }
        out.push(g);
    }
    Ok(out)
}

/// Right Cauchy–Green tensor `C = Fᵀ g F` and strain `E = ½(C − γ)`.
pub fn strain_measures(f: &Matrix3<f64>, g: &Matrix3<f64>, gamma: &Matrix3<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let c = f.transpose() * g * f;
    let asym = (c - c.transpose()).amax();
    if asym > 1e-12 * c.amax().max(1.0) {
        return Err(Error::NumericalConsistency(format!("C is not symmetric (defect {asym:e})")));
    }
    let c = (c + c.transpose()) * 0.5;
    Ok((c, (c - gamma) * 0.5))
}

/// Model-dependent generalized metric `G(F, g, ν, ∇ν)` and `Ē = ½(G − γ)`.
pub fn generalized_metric(
    f: &Matrix3<f64>,
    g: &Matrix3<f64>,
    nu: &DVector<f64>,
    grad_nu: &DMatrix<f64>,
    gamma: &Matrix3<f64>,
    hook: impl Fn(&Matrix3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Matrix3<f64>,
) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let big_g = hook(f, g, nu, grad_nu);
    if big_g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("generalized metric hook returned non-finite entries".into()));
    }
    if (big_g - big_g.transpose()).amax() > 1e-12 * big_g.amax().max(1.0) {
        return Err(Error::Model("generalized metric hook returned a non-symmetric matrix".into()));
    }
    if big_g.cholesky().is_none() {
        return Err(Error::Model("generalized metric hook returned a matrix that is not positive-definite".into()));
    }
    Ok((big_g, (big_g - gamma) * 0.5))
}

/// Per-node jet `(X, x, ẋ, F, ν, ν̇, ∇ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeJet {
    pub material: Vector3<f64>,
    pub x: Vector3<f64>,
    pub xdot: Vector3<f64>,
    pub f: Matrix3<f64>,
    pub nu: DVector<f64>,
    pub nudot: DVector<f64>,
    pub grad_nu: DMatrix<f64>,
}

impl NodeJet {
    /// Jet seen by an observer rotated by `exp([q]×)`: spatial quantities are
    /// rotated and `ν` is moved by the matching SO(3) action on the manifold.
    pub fn rotated(&self, q: &Vector3<f64>, manifold: &dyn Manifold) -> Result<Self> {
        let rot = Rotation3::from_scaled_axis(*q).into_inner();
        let xi = DVector::from_column_slice(q.as_slice());
        let nu = manifold.act(GroupTag::SO3, &xi, &self.nu)?;
        let jac = action_jacobian(manifold, &xi, &self.nu)?;
        Ok(Self {
            material: self.material,
            x: rot * self.x,
            xdot: rot * self.xdot,
            f: rot * self.f,
            nudot: &jac * &self.nudot,
            grad_nu: &jac * &self.grad_nu,
            nu,
        })
    }
}

/// Chart Jacobian of the finite action `ν ↦ exp(ξ)·ν`.
pub fn action_jacobian(manifold: &dyn Manifold, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DMatrix<f64>> {
    if manifold.tag() == "S2" {
        // Linear on the ambient space: the rotation matrix itself.
        let r = Rotation3::from_scaled_axis(Vector3::new(xi[0], xi[1], xi[2])).into_inner();
        return Ok(DMatrix::from_fn(3, 3, |i, j| r[(i, j)]));
    }
    let n = manifold.dim();
    let base = manifold.act(GroupTag::SO3, xi, nu)?;
    let mut jac = DMatrix::zeros(n, n);
    for c in 0..n {
        let h = 1e-6 * nu[c].abs().max(1.0);
        let mut p = nu.clone();
        p[c] += h;
        let fp = manifold.act(GroupTag::SO3, xi, &p)?;
        p[c] = nu[c] - h;
        let fm = manifold.act(GroupTag::SO3, xi, &p)?;
        jac.set_column(
            c,
            &((manifold.chart_difference(&base, &fp) - manifold.chart_difference(&base, &fm)) / (2.0 * h)),
        );
    }
    Ok(jac)
}

/// Discrete motion state at one instant: nodal fields plus derived gradients.
#[derive(Clone)]
pub struct MotionState {
    pub t: f64,
    pub manifold: Arc<dyn Manifold>,
    pub x: Vec<Vector3<f64>>,
    pub xdot: Vec<Vector3<f64>>,
    pub f: Vec<Matrix3<f64>>,
    pub nu: Vec<DVector<f64>>,
    pub nudot: Vec<DVector<f64>>,
    pub grad_nu: Vec<DMatrix<f64>>,
}

impl std::fmt::Debug for MotionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MotionState")
            .field("t", &self.t)
            .field("manifold", &self.manifold.tag())
            .field("nodes", &self.x.len())
            .finish()
    }
}

impl MotionState {
    /// Assembles a state, deriving `F` and `∇ν` with the grid stencils.
    pub fn from_fields(
        grid: &BodyGrid,
        t: f64,
        placement: &PlacementField,
        xdot: Vec<Vector3<f64>>,
        order: &OrderField,
        nudot: Vec<DVector<f64>>,
    ) -> Result<Self> {
        grid.check_len(xdot.len(), "velocity")?;
        grid.check_len(nudot.len(), "order rate")?;
        let f = deformation_gradient(grid, placement)?;
        let grad_nu = order_gradient(grid, order)?;
        Ok(Self {
            t,
            manifold: order.manifold.clone(),
            x: placement.values.clone(),
            xdot,
            f,
            nu: order.values.clone(),
            nudot,
            grad_nu,
        })
    }

    /// State whose jets come from closed-form fields at every node.
    pub fn from_jets(grid: &BodyGrid, t: f64, manifold: Arc<dyn Manifold>, jet: impl Fn(&Vector3<f64>) -> NodeJet) -> Self {
        let jets: Vec<NodeJet> = grid.nodes().map(|n| jet(&grid.coords(n))).collect();
        Self {
            t,
            manifold,
            x: jets.iter().map(|j| j.x).collect(),
            xdot: jets.iter().map(|j| j.xdot).collect(),
            f: jets.iter().map(|j| j.f).collect(),
            nu: jets.iter().map(|j| j.nu.clone()).collect(),
            nudot: jets.iter().map(|j| j.nudot.clone()).collect(),
            grad_nu: jets.iter().map(|j| j.grad_nu.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn jet(&self, grid: &BodyGrid, node: usize) -> NodeJet {
        NodeJet {
            material: grid.coords(node),
            x: self.x[node],
            xdot: self.xdot[node],
            f: self.f[node],
            nu: self.nu[node].clone(),
            nudot: self.nudot[node].clone(),
            grad_nu: self.grad_nu[node].clone(),
        }
    }

    pub fn placement(&self) -> PlacementField {
        PlacementField { values: self.x.clone() }
    }

    pub fn order(&self) -> OrderField {
        OrderField { manifold: self.manifold.clone(), values: self.nu.clone(), kinks: Vec::new() }
    }
}

/// Time levels of motion states with uniform step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub levels: Vec<MotionState>,
}

impl Trajectory {
    pub fn new(dt: f64, levels: Vec<MotionState>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Input("time step must be positive".into()));
        }
        for w in levels.windows(2) {
            if ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(w[1].t.abs()) {
                return Err(Error::Input(format!("non-uniform time levels at t = {}", w[0].t)));
            }
            if w[1].len() != w[0].len() {
                return Err(Error::Input("time levels have different node counts".into()));
            }
        }
        Ok(Self { dt, levels })
    }

    /// Checks that `level` has neighbours for central time differences.
    pub fn require_central(&self, level: usize) -> Result<()> {
        if self.levels.len() < 3 {
            return Err(Error::Input(format!("need at least 3 time levels, got {}", self.levels.len())));
        }
        if level == 0 || level + 1 >= self.levels.len() {
            return Err(Error::Input(format!("level {level} has no neighbours for central differences")));
        }
        Ok(())
    }
}

/// Spatial velocity `v = ẋ` and spatial order rate `υ = ν̇ + (∇ν) F⁻¹ v` at a node.
pub fn spatial_rate(f: &Matrix3<f64>, v: &Vector3<f64>, nudot: &DVector<f64>, grad_nu: &DMatrix<f64>, node: usize) -> Result<DVector<f64>> {
    let det = f.determinant();
    let finv = f.try_inverse().filter(|_| det > 0.0).ok_or(Error::Orientation { node, det })?;
    let w = finv * v;
    Ok(nudot + grad_nu * DVector::from_column_slice(w.as_slice()))
}

pub fn spatial_rates(state: &MotionState) -> Result<Vec<(Vector3<f64>, DVector<f64>)>> {
    (0..state.len())
        .map(|n| Ok((state.xdot[n], spatial_rate(&state.f[n], &state.xdot[n], &state.nudot[n], &state.grad_nu[n], n)?)))
        .collect()
}

/// Smooth map of the ambient space, used to describe microcracked placements.
pub trait SpatialMap {
    fn apply(&self, x: &Vector3<f64>) -> Vector3<f64>;

    fn gradient(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        fd_jacobian3(|y| self.apply(y), x, 1e-5)
    }
}

impl<F: Fn(&Vector3<f64>) -> Vector3<f64>> SpatialMap for F {
    fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self(x)
    }
}

/// Additive and multiplicative views of a microcracked deformation.
#[derive(Debug, Clone)]
pub struct MicrocrackDecomposition {
    /// `∇(𝔣 ∘ x̃)` from the grid stencil.
    pub f_total: Vec<Matrix3<f64>>,
    /// `F^(m) = I + grad d_a`, the spatial gradient of `𝔣` at the placement.
    pub f_micro: Vec<Matrix3<f64>>,
    /// `‖F_tot − F^(m) F‖` per node.
    pub residual: Vec<f64>,
}

impl MicrocrackDecomposition {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn microcrack_decomposition(grid: &BodyGrid, placement: &PlacementField, map: &dyn SpatialMap) -> Result<MicrocrackDecomposition> {
    let f = deformation_gradient(grid, placement)?;
    let composed = PlacementField { values: placement.values.iter().map(|x| map.apply(x)).collect() };
    // The composed map is allowed to fold; only the bulk placement must be orientation-preserving.
    let mut f_total = Vec::with_capacity(grid.len());
    for node in grid.nodes() {
        let mut m = Matrix3::zeros();
        for a in 0..3 {
            let col = if grid.is_active(a) {
                grid.derivative(&composed.values, node, a)
            } else {
                map.gradient(&placement.values[node]) * Vector3::ith(a, 1.0)
            };
            m.set_column(a, &col);
        }
        f_total.push(m);
    }
    let f_micro: Vec<Matrix3<f64>> = placement.values.iter().map(|x| map.gradient(x)).collect();
    let residual = (0..grid.len()).map(|n| (f_total[n] - f_micro[n] * f[n]).norm()).collect();
    Ok(MicrocrackDecomposition { f_total, f_micro, residual })
}

/// Rates after a change of observer with translation velocity `c` and
/// spin `q̇` about `x0`: `ẋ* = ẋ + c + q̇ × (x − x0)`, `ν̇* = ν̇ + ξ_M(ν)`.
pub fn observer_change(
    state: &MotionState,
    c: &Vector3<f64>,
    qdot: &Vector3<f64>,
    x0: &Vector3<f64>,
) -> Result<Vec<(Vector3<f64>, DVector<f64>)>> {
    let spin = qdot.norm() > 0.0;
    if spin && !state.manifold.groups().contains(&GroupTag::SO3) {
        return Err(Error::UnsupportedAction(format!("{} carries no SO(3) action", state.manifold.tag())));
    }
    let xi = DVector::from_column_slice(qdot.as_slice());
    (0..state.len())
        .map(|n| {
            let xdot = state.xdot[n] + c + qdot.cross(&(state.x[n] - x0));
            let nudot = if spin {
                &state.nudot[n] + state.manifold.action_generator(GroupTag::SO3, &xi, &state.nu[n])?.components
            } else {
                state.nudot[n].clone()
            };
            Ok((xdot, nudot))
        })
        .collect()
}
