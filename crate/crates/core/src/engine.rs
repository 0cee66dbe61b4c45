//! Solvers and studies: Riemannian energy minimization, time integration of
//! the coupled Euler–Lagrange system, manufactured solutions and refinement
//! studies.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interface::{self, ClosureSurfaceEnergy, InterfaceProblem, LevelSetSurface, SurfaceStencil};
use crate::kinematics::{microcrack_decomposition, BodyGrid, Face, MotionState, NodeJet, OrderField, PlacementField, SpatialMap, Trajectory};
use crate::linear::log_log_slope;
use crate::manifold::{wrap_angle, Circle, CircleDistance, EmbeddedSphere, Euclidean, GroupTag, Manifold};
use crate::mechanics::{
    el_residuals, el_residuals_static, noether_residual, presets, BodySources, ClosureSources, CurlField, GeneratorSet,
    LagrangianModel, NodeSet, NoetherReport,
};

/// Line-search rule of the minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StepRule {
    /// Constant step; a step that raises the energy stops the solve.
    Fixed { step: f64 },
    /// Armijo backtracking from a Barzilai–Borwein trial step.
    Backtracking { shrink: f64, sufficient_decrease: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking { shrink: 0.5, sufficient_decrease: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub step: StepRule,
    /// Stop once the discrete EL residual (∞-norm over free nodes) drops below this.
    pub gradient_tol: f64,
    /// Faces on which the placement is held at its initial value.
    #[serde(default)]
    pub fixed_x: Vec<Face>,
    /// Faces on which the order parameter is held at its initial value.
    #[serde(default)]
    pub fixed_nu: Vec<Face>,
    #[serde(default = "default_backtracks")]
    pub max_backtracks: usize,
}

fn default_backtracks() -> usize {
    60
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iterations: 10_000, step: StepRule::default(), gradient_tol: 1e-6, fixed_x: Vec::new(), fixed_nu: Vec::new(), max_backtracks: 60 }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tol > 0.0) {
            return Err(Error::Input("gradient tolerance must be positive".into()));
        }
        match self.step {
            StepRule::Fixed { step } if !(step > 0.0) => Err(Error::Input("fixed step must be positive".into())),
            StepRule::Backtracking { shrink, sufficient_decrease }
                if !(shrink > 0.0 && shrink < 1.0 && sufficient_decrease > 0.0 && sufficient_decrease < 1.0) =>
            {
                Err(Error::Input("backtracking parameters must lie in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub residual: f64,
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone)]
pub struct MinimizeReport {
    pub state: MotionState,
    pub iterations: usize,
    pub converged: bool,
    pub energy: f64,
    /// Discrete EL residual of the cell energy at the final iterate.
    pub residual: f64,
    /// Node-centred stencil residual (`el_residuals_static`) at the final iterate, interior nodes.
    pub stencil_residual: f64,
    pub log: Vec<IterationRecord>,
}

impl MinimizeReport {
    pub fn energy_history(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.energy).collect()
    }
}

/// Cell-centred discretisation of `∫ρ₀(e + w)`: each grid cell evaluates the
/// energy at its centre with gradients from edge differences averaged over
/// the cell, which avoids the odd/even decoupling of node-centred stencils.
pub struct CellEnergy {
    cells: Vec<Cell>,
    lumped: Vec<f64>,
}

struct Cell {
    corners: Vec<usize>,
    coef: Vec<Vector3<f64>>,
    vol: f64,
    rho: f64,
    center: Vector3<f64>,
}

impl CellEnergy {
    pub fn new(grid: &BodyGrid) -> Result<Self> {
        let active: Vec<usize> = (0..3).filter(|&a| grid.is_active(a)).collect();
        let counts = grid.counts();
        let d = active.len();
        let ncorner = 1usize << d;
        let mut vol = 1.0;
        for a in 0..3 {
            vol *= grid.spacing(a);
        }
        let ranges: Vec<usize> = (0..3).map(|a| if grid.is_active(a) { counts[a] - 1 } else { 1 }).collect();
        let mut cells = Vec::new();
        let mut lumped = vec![0.0; grid.len()];
        for k in 0..ranges[2] {
            for j in 0..ranges[1] {
                for i in 0..ranges[0] {
                    let base = [i, j, k];
                    let mut corners = Vec::with_capacity(ncorner);
                    let mut coef = Vec::with_capacity(ncorner);
                    for bits in 0..ncorner {
                        let mut ijk = base;
                        let mut c = Vector3::zeros();
                        for (q, &a) in active.iter().enumerate() {
                            let up = (bits >> q) & 1 == 1;
                            if up {
                                ijk[a] += 1;
                            }
                            let sign = if up { 1.0 } else { -1.0 };
                            c[a] = sign / ((ncorner / 2) as f64 * grid.spacing(a));
                        }
                        corners.push(grid.index(ijk));
                        coef.push(c);
                    }
                    let center = corners.iter().map(|&n| grid.coords(n)).sum::<Vector3<f64>>() / ncorner as f64;
                    let rho = corners.iter().map(|&n| grid.rho0(n)).sum::<f64>() / ncorner as f64;
                    for &n in &corners {
                        lumped[n] += vol / ncorner as f64;
                    }
                    cells.push(Cell { corners, coef, vol, rho, center });
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Input("grid has no cells".into()));
        }
        Ok(Self { cells, lumped })
    }

    /// Lumped nodal volume used to turn energy gradients into residual densities.
    pub fn lumped_weight(&self, node: usize) -> f64 {
        self.lumped[node]
    }

    /// Energy and its gradient with respect to nodal placements and chart values.
    pub fn evaluate(
        &self,
        grid: &BodyGrid,
        model: &dyn LagrangianModel,
        manifold: &dyn Manifold,
        x: &[Vector3<f64>],
        nu: &[DVector<f64>],
        with_gradient: bool,
    ) -> Result<(f64, Vec<Vector3<f64>>, Vec<DVector<f64>>)> {
        let dim = manifold.dim();
        let mut energy = 0.0;
        let mut gx = if with_gradient { vec![Vector3::zeros(); grid.len()] } else { Vec::new() };
        let mut gn = if with_gradient { vec![DVector::zeros(dim); grid.len()] } else { Vec::new() };
        for (ci, c) in self.cells.iter().enumerate() {
            let nc = c.corners.len() as f64;
            let mut f = Matrix3::zeros();
            for a in 0..3 {
                if !grid.is_active(a) {
                    f[(a, a)] = 1.0;
                }
            }
            let ref_nu = &nu[c.corners[0]];
            let mut grad = DMatrix::zeros(dim, 3);
            let mut mean_diff = DVector::zeros(dim);
            let mut xc = Vector3::zeros();
            for (b, &n) in c.corners.iter().enumerate() {
                f += x[n] * c.coef[b].transpose();
                let diff = manifold.chart_difference(ref_nu, &nu[n]);
                grad += &diff * c.coef[b].transpose();
                mean_diff += diff;
                xc += x[n];
            }
            xc /= nc;
            let nuc = ref_nu + mean_diff / nc;
            let det = f.determinant();
            if !(det > 0.0) {
                return Err(Error::Orientation { node: ci, det });
            }
            let e = model.energy(&c.center, &f, &nuc, &grad) + model.potential(&xc, &nuc);
            energy += c.vol * c.rho * e;
            if with_gradient {
                let w = c.vol * c.rho;
                let p = model.d_energy_df(&c.center, &f, &nuc, &grad);
                let s = model.d_energy_dgrad(&c.center, &f, &nuc, &grad);
                let zx = model.d_potential_dx(&xc, &nuc) / nc;
                let zn = (model.d_energy_dnu(&c.center, &f, &nuc, &grad) + model.d_potential_dnu(&xc, &nuc)) / nc;
                for (b, &n) in c.corners.iter().enumerate() {
                    let cb = DVector::from_column_slice(c.coef[b].as_slice());
                    gx[n] += (p * c.coef[b] + zx) * w;
                    gn[n] += (&s * cb + &zn) * w;
                }
            }
        }
        Ok((energy, gx, gn))
    }
}

fn retract_point(manifold: &dyn Manifold, nu: &DVector<f64>) -> DVector<f64> {
    let r = manifold.retract(nu);
    if manifold.tag().starts_with("S1") {
        r.map(wrap_angle)
    } else {
        r
    }
}

struct Iterate {
    x: Vec<Vector3<f64>>,
    nu: Vec<DVector<f64>>,
    energy: f64,
    gx: Vec<Vector3<f64>>,
    gn: Vec<DVector<f64>>,
    residual: f64,
}

fn dot_fields(ax: &[Vector3<f64>], an: &[DVector<f64>], bx: &[Vector3<f64>], bn: &[DVector<f64>]) -> f64 {
    ax.iter().zip(bx).map(|(a, b)| a.dot(b)).sum::<f64>() + an.iter().zip(bn).map(|(a, b)| a.dot(b)).sum::<f64>()
}

/// Projected gradient descent on `∫ρ₀(e + w)` with retraction onto `M`.
///
/// The discrete EL residual at a free node is the energy gradient divided by
/// the lumped nodal volume; its ∞-norm drives termination.
pub fn minimize_energy(
    grid: &BodyGrid,
    model: &dyn LagrangianModel,
    init: (&PlacementField, &OrderField),
    opts: &SolveOptions,
) -> Result<MinimizeReport> {
    opts.validate()?;
    let (placement, order) = init;
    grid.check_len(placement.values.len(), "placement")?;
    grid.check_len(order.values.len(), "order field")?;
    let manifold = order.manifold.clone();
    let m = manifold.as_ref();
    let cells = CellEnergy::new(grid)?;
    let free_x: Vec<bool> = grid.nodes().map(|n| !grid.on_faces(n, &opts.fixed_x)).collect();
    let free_nu: Vec<bool> = grid.nodes().map(|n| !grid.on_faces(n, &opts.fixed_nu)).collect();

    let evaluate = |x: Vec<Vector3<f64>>, nu: Vec<DVector<f64>>| -> Result<Iterate> {
        let (energy, mut gx, mut gn) = cells.evaluate(grid, model, m, &x, &nu, true)?;
        let mut residual: f64 = 0.0;
        for n in grid.nodes() {
            if free_x[n] {
                residual = residual.max(gx[n].norm() / cells.lumped_weight(n));
            } else {
                gx[n] = Vector3::zeros();
            }
            if free_nu[n] {
                gn[n] = m.project_tangent(&nu[n], &gn[n]);
                residual = residual.max(gn[n].norm() / cells.lumped_weight(n));
            } else {
                gn[n] = DVector::zeros(m.dim());
            }
        }
        Ok(Iterate { x, nu, energy, gx, gn, residual })
    };
    let energy_only = |x: &[Vector3<f64>], nu: &[DVector<f64>]| -> f64 {
        cells.evaluate(grid, model, m, x, nu, false).map(|r| r.0).unwrap_or(f64::INFINITY)
    };

    let mut cur = evaluate(placement.values.clone(), order.values.iter().map(|v| retract_point(m, v)).collect())?;
    let mut log = vec![IterationRecord { iteration: 0, energy: cur.energy, residual: cur.residual, step: 0.0, backtracks: 0 }];
    let mut alpha = match opts.step {
        StepRule::Fixed { step } => step,
        StepRule::Backtracking { .. } => 1.0,
    };
    let mut iterations = 0;
    while cur.residual >= opts.gradient_tol && iterations < opts.max_iterations {
        let gnorm2 = dot_fields(&cur.gx, &cur.gn, &cur.gx, &cur.gn);
        let trial = |a: f64| -> (Vec<Vector3<f64>>, Vec<DVector<f64>>) {
            let x: Vec<Vector3<f64>> = cur.x.iter().zip(&cur.gx).map(|(x, g)| x - g * a).collect();
            let nu: Vec<DVector<f64>> = cur.nu.iter().zip(&cur.gn).map(|(v, g)| retract_point(m, &(v - g * a))).collect();
            (x, nu)
        };
        let mut backtracks = 0;
        // Decreases below this cannot be resolved in the energy.
        let resolution = 64.0 * f64::EPSILON * cur.energy.abs();
        let next = loop {
            let (x, nu) = trial(alpha);
            let e = energy_only(&x, &nu);
            let accepted = match opts.step {
                StepRule::Fixed { .. } => (e <= cur.energy).then(|| evaluate(x, nu)).transpose()?,
                StepRule::Backtracking { sufficient_decrease, .. } => {
                    let predicted = sufficient_decrease * alpha * gnorm2;
                    if e <= cur.energy - predicted {
                        Some(evaluate(x, nu)?)
                    } else if predicted <= resolution && e <= cur.energy + resolution {
                        // approximate Armijo: the slope along the step must still point downhill
                        let cand = evaluate(x, nu)?;
                        let slope = dot_fields(&cand.gx, &cand.gn, &cur.gx, &cur.gn);
                        (slope >= (1.0 - 2.0 * sufficient_decrease) * gnorm2).then_some(cand)
                    } else {
                        None
                    }
                }
            };
            if let Some(next) = accepted {
                break next;
            }
            match opts.step {
                StepRule::Backtracking { shrink, .. } if backtracks < opts.max_backtracks => {
                    alpha *= shrink;
                    backtracks += 1;
                }
                _ => {
                    return Err(Error::Stagnation {
                        iterations,
                        detail: format!(
                            "no energy decrease after {backtracks} backtracks (energy {:e}, residual {:e}, last step {alpha:e})",
                            cur.energy, cur.residual
                        ),
                    })
                }
            }
        };
        iterations += 1;
        log.push(IterationRecord { iteration: iterations, energy: next.energy, residual: next.residual, step: alpha, backtracks });
        if let StepRule::Backtracking { .. } = opts.step {
            // Barzilai–Borwein step from the last displacement and gradient change.
            let sx: Vec<Vector3<f64>> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
            let sn: Vec<DVector<f64>> = next.nu.iter().zip(&cur.nu).map(|(a, b)| m.chart_difference(b, a)).collect();
            let yx: Vec<Vector3<f64>> = next.gx.iter().zip(&cur.gx).map(|(a, b)| a - b).collect();
            let yn: Vec<DVector<f64>> = next.gn.iter().zip(&cur.gn).map(|(a, b)| a - b).collect();
            let ss = dot_fields(&sx, &sn, &sx, &sn);
            let sy = dot_fields(&sx, &sn, &yx, &yn);
            alpha = if sy > 0.0 && ss > 0.0 { (ss / sy).clamp(1e-20, 1e20) } else { (alpha * 2.0).min(1e20) };
        }
        cur = next;
    }
    let zeros_x = vec![Vector3::zeros(); grid.len()];
    let zeros_n = vec![DVector::zeros(m.dim()); grid.len()];
    let state = MotionState::from_fields(
        grid,
        0.0,
        &PlacementField { values: cur.x.clone() },
        zeros_x,
        &OrderField { manifold: manifold.clone(), values: cur.nu.clone(), kinks: order.kinks.clone() },
        zeros_n,
    )?;
    let stencil_residual = el_residuals_static(grid, &state, model, None, NodeSet::Interior)?.linf();
    Ok(MinimizeReport {
        state,
        iterations,
        converged: cur.residual < opts.gradient_tol,
        energy: cur.energy,
        residual: cur.residual,
        stencil_residual,
        log,
    })
}

/// Prescribed motion of constrained nodes: `(X, t)` to the full jet.
pub type BoundaryDriver = Arc<dyn Fn(&Vector3<f64>, f64) -> NodeJet + Send + Sync>;

#[derive(Clone, Default)]
pub struct IntegrateOptions {
    /// Faces whose nodes are not integrated: they follow `driver` when
    /// given, otherwise they stay at their initial values at rest.
    pub fixed: Vec<Face>,
    pub driver: Option<BoundaryDriver>,
    pub sources: Option<Arc<dyn BodySources>>,
    /// Store every `record_every`-th step (0 or 1 stores all).
    pub record_every: usize,
}

#[derive(Debug, Clone)]
pub struct IntegrationReport {
    pub trajectory: Trajectory,
    /// Total energy at every stored level.
    pub energy: Vec<f64>,
    /// `max |E(t) − E(0)| / |E(0)|` over stored levels.
    pub relative_drift: f64,
    pub steps: usize,
}

/// Discrete Hamiltonian of the integrator: lumped kinetic terms
/// `Σ W ρ₀(½|ẋ|² + ∂_ν̇χ·ν̇ − χ)` plus the cell energy.
pub fn total_energy(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel) -> Result<f64> {
    let cells = CellEnergy::new(grid)?;
    discrete_hamiltonian(grid, &cells, state, model)
}

fn discrete_hamiltonian(grid: &BodyGrid, cells: &CellEnergy, state: &MotionState, model: &dyn LagrangianModel) -> Result<f64> {
    grid.check_len(state.len(), "motion state")?;
    let kinetic: f64 = grid
        .nodes()
        .map(|n| {
            let (nu, nd) = (&state.nu[n], &state.nudot[n]);
            let pi = model.d_coenergy_dnudot(nu, nd);
            cells.lumped_weight(n) * grid.rho0(n) * (0.5 * state.xdot[n].norm_squared() + pi.dot(nd) - model.coenergy(nu, nd))
        })
        .sum();
    Ok(kinetic + cells.evaluate(grid, model, state.manifold.as_ref(), &state.x, &state.nu, false)?.0)
}

fn dvector_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, at: &DVector<f64>) -> DMatrix<f64> {
    let n = at.len();
    let base = f(at);
    let mut jac = DMatrix::zeros(base.len(), n);
    for c in 0..n {
        let h = 1e-6 * at[c].abs().max(1.0);
        let mut p = at.clone();
        p[c] += h;
        let mut q = at.clone();
        q[c] -= h;
        jac.set_column(c, &((f(&p) - f(&q)) / (2.0 * h)));
    }
    jac
}

/// Whether `χ` carries substructural inertia at all (identically zero mass
/// freezes the order parameter).
fn substructural_mass(model: &dyn LagrangianModel, nu: &DVector<f64>, nudot: &DVector<f64>) -> DMatrix<f64> {
    dvector_jacobian(|v| model.d_coenergy_dnudot(nu, v), nudot)
}

struct Accelerations {
    x: Vec<Vector3<f64>>,
    nu: Vec<DVector<f64>>,
    inertial: bool,
}

fn accelerations(
    grid: &BodyGrid,
    cells: &CellEnergy,
    model: &dyn LagrangianModel,
    state: &MotionState,
    sources: Option<&dyn BodySources>,
) -> Result<Accelerations> {
    let m = state.manifold.as_ref();
    let embedded_sphere = m.tag() == "S2";
    let (_, gx, gn) = cells.evaluate(grid, model, m, &state.x, &state.nu, true)?;
    let mut ax = Vec::with_capacity(grid.len());
    let mut an = Vec::with_capacity(grid.len());
    let mut inertial = false;
    for n in grid.nodes() {
        let rho = grid.rho0(n);
        let w = cells.lumped_weight(n);
        let xm = grid.coords(n);
        let mut force = -gx[n] / w;
        let mut q = -&gn[n] / w;
        if let Some(src) = sources {
            force += src.force(&xm, state.t);
            q += src.order_source(&xm, state.t);
        }
        ax.push(force / rho);
        let (nu, nudot) = (&state.nu[n], &state.nudot[n]);
        let mass = substructural_mass(model, nu, nudot);
        if mass.amax() == 0.0 {
            an.push(DVector::zeros(nu.len()));
            continue;
        }
        inertial = true;
        let coupling = dvector_jacobian(|v| model.d_coenergy_dnudot(v, nudot), nu);
        let rhs = q / rho + model.d_coenergy_dnu(nu, nudot) - coupling * nudot;
        let svd = mass.clone().svd(false, false);
        let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
        // The embedded sphere only needs the mass on the tangent plane.
        let mut a = if embedded_sphere {
            let t = DMatrix::identity(3, 3) - nu * nu.transpose();
            let reduced = &t * &mass * &t + nu * nu.transpose() * smax;
            reduced.lu().solve(&(&t * rhs)).ok_or_else(|| Error::Model(format!("singular substructural mass at node {n}")))?
        } else {
            if !(smin > 1e-10 * smax) {
                return Err(Error::Model(format!("singular substructural mass at node {n} (σ_min/σ_max = {:e})", smin / smax)));
            }
            mass.lu().solve(&rhs).ok_or_else(|| Error::Model(format!("singular substructural mass at node {n}")))?
        };
        if embedded_sphere {
            a = m.project_tangent(nu, &a) - nu * nudot.norm_squared();
        }
        an.push(a);
    }
    Ok(Accelerations { x: ax, nu: an, inertial })
}

fn assemble(
    grid: &BodyGrid,
    t: f64,
    manifold: &Arc<dyn Manifold>,
    x: Vec<Vector3<f64>>,
    xdot: Vec<Vector3<f64>>,
    nu: Vec<DVector<f64>>,
    nudot: Vec<DVector<f64>>,
) -> Result<MotionState> {
    MotionState::from_fields(grid, t, &PlacementField { values: x }, xdot, &OrderField { manifold: manifold.clone(), values: nu, kinks: Vec::new() }, nudot)
}

/// Velocity-Verlet integration of the lumped-mass equations
/// `ρ₀W ẍ = −∂E_h/∂x + W f` and their order-parameter analogue, where `E_h`
/// is the cell energy; embedded-sphere values are renormalised each step.
pub fn integrate_motion(
    grid: &BodyGrid,
    model: &dyn LagrangianModel,
    init: &MotionState,
    dt: f64,
    t_final: f64,
    opts: &IntegrateOptions,
) -> Result<IntegrationReport> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::Input("time step must be positive and final time nonnegative".into()));
    }
    let steps = (t_final / dt).round() as usize;
    if ((steps as f64) * dt - t_final).abs() > 1e-9 * t_final.max(dt) {
        return Err(Error::Input(format!("final time {t_final} is not a multiple of Δt = {dt}")));
    }
    grid.check_len(init.len(), "initial state")?;
    let manifold = init.manifold.clone();
    let m = manifold.as_ref();
    let fixed: Vec<bool> = grid.nodes().map(|n| grid.on_faces(n, &opts.fixed)).collect();
    let sources = opts.sources.as_deref();
    let every = opts.record_every.max(1);
    let t0 = init.t;
    let cells = CellEnergy::new(grid)?;

    let constrain = |t: f64, x: &mut [Vector3<f64>], v: &mut [Vector3<f64>], nu: &mut [DVector<f64>], nd: &mut [DVector<f64>]| {
        for n in grid.nodes().filter(|&n| fixed[n]) {
            match &opts.driver {
                Some(d) => {
                    let j = d(&grid.coords(n), t);
                    x[n] = j.x;
                    v[n] = j.xdot;
                    nu[n] = j.nu;
                    nd[n] = j.nudot;
                }
                None => {
                    x[n] = init.x[n];
                    v[n] = Vector3::zeros();
                    nu[n] = init.nu[n].clone();
                    nd[n] = DVector::zeros(m.dim());
                }
            }
        }
    };

    let (mut x, mut v, mut nu, mut nd) = (init.x.clone(), init.xdot.clone(), init.nu.clone(), init.nudot.clone());
    constrain(t0, &mut x, &mut v, &mut nu, &mut nd);
    let mut state = assemble(grid, t0, &manifold, x.clone(), v.clone(), nu.clone(), nd.clone())?;
    let mut acc = accelerations(grid, &cells, model, &state, sources)?;
    if !acc.inertial {
        nd.iter_mut().for_each(|r| r.fill(0.0));
    }
    let e0 = discrete_hamiltonian(grid, &cells, &state, model)?;
    let mut levels = vec![state.clone()];
    let mut energy = vec![e0];
    for step in 1..=steps {
        let t = t0 + step as f64 * dt;
        let mut xn: Vec<Vector3<f64>> = (0..x.len()).map(|n| x[n] + v[n] * dt + acc.x[n] * (0.5 * dt * dt)).collect();
        let mut vp: Vec<Vector3<f64>> = (0..x.len()).map(|n| v[n] + acc.x[n] * dt).collect();
        let mut nun: Vec<DVector<f64>> = (0..x.len()).map(|n| m.retract(&(&nu[n] + &nd[n] * dt + &acc.nu[n] * (0.5 * dt * dt)))).collect();
        let mut ndp: Vec<DVector<f64>> = (0..x.len()).map(|n| m.project_tangent(&nun[n], &(&nd[n] + &acc.nu[n] * dt))).collect();
        if !acc.inertial {
            nun = nu.clone();
            ndp.iter_mut().for_each(|r| r.fill(0.0));
        }
        constrain(t, &mut xn, &mut vp, &mut nun, &mut ndp);
        let predicted = assemble(grid, t, &manifold, xn.clone(), vp, nun.clone(), ndp)?;
        let next = accelerations(grid, &cells, model, &predicted, sources)?;
        let mut vn: Vec<Vector3<f64>> = (0..x.len()).map(|n| v[n] + (acc.x[n] + next.x[n]) * (0.5 * dt)).collect();
        let mut ndn: Vec<DVector<f64>> = if acc.inertial {
            (0..x.len()).map(|n| m.project_tangent(&nun[n], &(&nd[n] + (&acc.nu[n] + &next.nu[n]) * (0.5 * dt)))).collect()
        } else {
            vec![DVector::zeros(m.dim()); x.len()]
        };
        constrain(t, &mut xn, &mut vn, &mut nun, &mut ndn);
        state = assemble(grid, t, &manifold, xn.clone(), vn.clone(), nun.clone(), ndn.clone())?;
        acc = next;
        x = xn;
        v = vn;
        nu = nun;
        nd = ndn;
        let e = discrete_hamiltonian(grid, &cells, &state, model)?;
        if !e.is_finite() || e.abs() > 10.0 * e0.abs().max(1e-12) {
            return Err(Error::Instability { step, energy: e, initial: e0 });
        }
        if step % every == 0 {
            levels.push(state.clone());
            energy.push(e);
        }
    }
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    let relative_drift = energy.iter().map(|e| (e - e0).abs() / scale).fold(0.0, f64::max);
    Ok(IntegrationReport { trajectory: Trajectory::new(dt * every as f64, levels)?, energy, relative_drift, steps })
}

/// Registered manufactured cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManufacturedCase {
    BulkSmooth,
    TwoPhaseBar,
    StructuredSphere,
    RigidRotation,
}

impl ManufacturedCase {
    pub const ALL: [ManufacturedCase; 4] = [Self::BulkSmooth, Self::TwoPhaseBar, Self::StructuredSphere, Self::RigidRotation];

    pub fn parse(tag: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.tag() == tag).ok_or_else(|| Error::UnknownCase(tag.to_string()))
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::BulkSmooth => "bulk-smooth",
            Self::TwoPhaseBar => "two-phase-bar",
            Self::StructuredSphere => "structured-sphere",
            Self::RigidRotation => "rigid-rotation",
        }
    }
}

pub type ExactJet = Arc<dyn Fn(&Vector3<f64>, f64) -> NodeJet + Send + Sync>;

/// A manufactured problem: exact fields, compensating sources and, for
/// bulk cases, a three-level trajectory sampled on a grid.
#[derive(Clone)]
pub struct Manufactured {
    pub case: ManufacturedCase,
    pub model: Arc<dyn LagrangianModel>,
    pub manifold: Arc<dyn Manifold>,
    pub grid: Option<BodyGrid>,
    pub trajectory: Option<Trajectory>,
    pub exact: Option<ExactJet>,
    pub sources: Option<ClosureSources>,
    pub interface: Option<InterfaceProblem>,
    pub surface_energy: Option<ClosureSurfaceEnergy>,
}

impl Manufactured {
    /// Largest residual of the balances the case is built to satisfy: the
    /// EL residual with sources at the middle level, or the interface
    /// residuals at sample points.
    pub fn verify(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        if let (Some(grid), Some(traj)) = (&self.grid, &self.trajectory) {
            let src = self.sources.as_ref().map(|s| s as &dyn BodySources);
            worst = worst.max(el_residuals(grid, traj, 1, self.model.as_ref(), src, NodeSet::Inset(2))?.linf());
        }
        if let Some(prob) = &self.interface {
            let pts = prob.surface.sample_points(8)?;
            let rep = prob.report(self.surface_energy.as_ref().map(|p| p as &dyn interface::SurfaceEnergy), &pts)?;
            worst = worst.max(rep.max_std).max(rep.max_sub).max(rep.max_cfg);
        }
        Ok(worst)
    }
}

/// Parameters of the bulk-smooth case: `x = X + A sin(k·X − ωt)`,
/// `ν = n₀ + B sin(q·X − ϖt)` on a unit square, `M = ℝ`.
pub mod bulk_smooth {
    use super::*;

    pub const MU: f64 = 2.0;
    pub const KAPPA: f64 = 1.5;
    pub const ETA: f64 = 0.7;
    pub const RHO0: f64 = 1.2;
    pub const OMEGA: f64 = 0.9;
    pub const OMEGA_NU: f64 = 1.3;
    pub const N0: f64 = 0.1;
    pub const B: f64 = 0.2;

    pub fn amplitude() -> Vector3<f64> {
        Vector3::new(0.05, -0.03, 0.02)
    }
    pub fn wave_vector() -> Vector3<f64> {
        Vector3::new(1.3, 0.8, 0.0)
    }
    pub fn order_wave_vector() -> Vector3<f64> {
        Vector3::new(-0.7, 1.6, 0.0)
    }

    pub fn jet(x: &Vector3<f64>, t: f64) -> NodeJet {
        let (a, k, q) = (amplitude(), wave_vector(), order_wave_vector());
        let th = k.dot(x) - OMEGA * t;
        let ps = q.dot(x) - OMEGA_NU * t;
        NodeJet {
            material: *x,
            x: x + a * th.sin(),
            xdot: -a * (OMEGA * th.cos()),
            f: Matrix3::identity() + a * k.transpose() * th.cos(),
            nu: DVector::from_element(1, N0 + B * ps.sin()),
            nudot: DVector::from_element(1, -B * OMEGA_NU * ps.cos()),
            grad_nu: DMatrix::from_row_slice(1, 3, (q * (B * ps.cos())).as_slice()),
        }
    }

    /// `ρ₀(ẍ − μΔx)` and `ρ₀(ν̈ + ην − κΔν)` substituted in closed form.
    pub fn sources() -> ClosureSources {
        let (a, k, q) = (amplitude(), wave_vector(), order_wave_vector());
        ClosureSources {
            force: Arc::new(move |x, t| a * (RHO0 * (MU * k.norm_squared() - OMEGA * OMEGA) * (k.dot(x) - OMEGA * t).sin())),
            order: Arc::new(move |x, t| {
                let s = (q.dot(x) - OMEGA_NU * t).sin();
                DVector::from_element(1, RHO0 * ((ETA + KAPPA * q.norm_squared() - OMEGA_NU * OMEGA_NU) * B * s + ETA * N0))
            }),
        }
    }
}

fn sampled_trajectory(grid: &BodyGrid, manifold: &Arc<dyn Manifold>, jet: &ExactJet, t0: f64, dt: f64) -> Result<Trajectory> {
    let levels = (0..3)
        .map(|i| {
            let t = t0 + (i as f64 - 1.0) * dt;
            let jets: Vec<NodeJet> = grid.nodes().map(|n| jet(&grid.coords(n), t)).collect();
            MotionState::from_fields(
                grid,
                t,
                &PlacementField { values: jets.iter().map(|j| j.x).collect() },
                jets.iter().map(|j| j.xdot).collect(),
                &OrderField { manifold: manifold.clone(), values: jets.iter().map(|j| j.nu.clone()).collect(), kinks: Vec::new() },
                jets.iter().map(|j| j.nudot.clone()).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(dt, levels)
}

/// Builds a manufactured case at grid spacing `h` (time step `h/2`).
pub fn manufactured_solution(case: &str, h: f64) -> Result<Manufactured> {
    let case = ManufacturedCase::parse(case)?;
    if !(h > 0.0) {
        return Err(Error::Input("grid spacing must be positive".into()));
    }
    let dt = 0.5 * h;
    match case {
        ManufacturedCase::BulkSmooth => {
            let manifold: Arc<dyn Manifold> = Arc::new(Euclidean::new(1)?);
            let grid = BodyGrid::with_spacing([0.0; 3], [1.0, 1.0, 1.0], h, [true, true, false])?.with_uniform_density(bulk_smooth::RHO0)?;
            let exact: ExactJet = Arc::new(bulk_smooth::jet);
            let traj = sampled_trajectory(&grid, &manifold, &exact, 0.3, dt)?;
            Ok(Manufactured {
                case,
                model: Arc::new(presets::bulk_smooth(bulk_smooth::MU, bulk_smooth::KAPPA, bulk_smooth::ETA)),
                manifold,
                grid: Some(grid),
                trajectory: Some(traj),
                exact: Some(exact),
                sources: Some(bulk_smooth::sources()),
                interface: None,
                surface_energy: None,
            })
        }
        ManufacturedCase::TwoPhaseBar => {
            let sol = interface::manufactured::solve_bar(interface::manufactured::BarParameters::default())?;
            let prob = interface::manufactured::bar_problem(&sol, Vector3::zeros())?;
            let p = sol.params;
            // The phase boundary sits at X₁ = Ut; x is continuous across it.
            let exact: ExactJet = Arc::new(move |x: &Vector3<f64>, t: f64| {
                let (lam, v) = if x[0] > sol.u * t { (sol.lambda_plus, sol.v_plus) } else { (p.lambda_minus, p.v_minus) };
                NodeJet {
                    material: *x,
                    x: Vector3::new(lam * x[0] + v * t, x[1], x[2]),
                    xdot: Vector3::new(v, 0.0, 0.0),
                    f: Matrix3::from_diagonal(&Vector3::new(lam, 1.0, 1.0)),
                    nu: DVector::zeros(1),
                    nudot: DVector::zeros(1),
                    grad_nu: DMatrix::zeros(1, 3),
                }
            });
            Ok(Manufactured {
                case,
                model: prob.model.clone(),
                manifold: prob.manifold.clone(),
                grid: None,
                trajectory: None,
                exact: Some(exact),
                sources: None,
                interface: Some(prob),
                surface_energy: None,
            })
        }
        ManufacturedCase::StructuredSphere => {
            let (radius, sigma) = (0.8, 0.35);
            let mut prob = interface::manufactured::sphere_tension(radius, sigma, 1.0, 1.1)?;
            prob.stencil = SurfaceStencil { h: h.min(0.05 * radius) };
            Ok(Manufactured {
                case,
                model: prob.model.clone(),
                manifold: prob.manifold.clone(),
                grid: None,
                trajectory: None,
                exact: None,
                sources: None,
                interface: Some(prob),
                surface_energy: Some(interface::surface_presets::constant(sigma)),
            })
        }
        ManufacturedCase::RigidRotation => {
            let manifold: Arc<dyn Manifold> = Arc::new(EmbeddedSphere);
            let rho0 = 1.1;
            let grid = BodyGrid::with_spacing([-0.5; 3], [0.5; 3], h, [true; 3])?.with_uniform_density(rho0)?;
            let omega = Vector3::new(0.3, -0.5, 0.8);
            let nu0 = Vector3::new(0.3, -0.2, 1.0).normalize();
            let rot = move |t: f64| Rotation3::from_scaled_axis(omega * t).into_inner();
            let exact: ExactJet = Arc::new(move |x: &Vector3<f64>, t: f64| {
                let q = rot(t);
                let y = q * x;
                let n = q * nu0;
                NodeJet {
                    material: *x,
                    x: y,
                    xdot: omega.cross(&y),
                    f: q,
                    nu: DVector::from_column_slice(n.as_slice()),
                    nudot: DVector::from_column_slice(omega.cross(&n).as_slice()),
                    grad_nu: DMatrix::zeros(3, 3),
                }
            });
            let sources = ClosureSources {
                force: Arc::new(move |x, t| omega.cross(&omega.cross(&(rot(t) * x))) * rho0),
                order: Arc::new(move |_, t| {
                    let n = rot(t) * nu0;
                    DVector::from_column_slice((omega.cross(&omega.cross(&n)) * rho0).as_slice())
                }),
            };
            let traj = sampled_trajectory(&grid, &manifold, &exact, 0.2, dt)?;
            Ok(Manufactured {
                case,
                model: Arc::new(presets::isotropic_director(1.0, 2.0, 0.5).with_quadratic_coenergy()),
                manifold,
                grid: Some(grid),
                trajectory: Some(traj),
                exact: Some(exact),
                sources: Some(sources),
                interface: None,
                surface_energy: None,
            })
        }
    }
}

/// Parameters of the order-parameter wave on `M = S¹`: `ν = A sin(kX₁ − ωt)`
/// with `ω = k√κ`, `χ = ½ν̇²`, `e = ½κ|∇ν|²`, ends driven by the exact wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveSetup {
    pub amplitude: f64,
    pub wavenumber: f64,
    pub kappa: f64,
    pub t_final: f64,
}

impl Default for WaveSetup {
    fn default() -> Self {
        Self { amplitude: 0.05, wavenumber: std::f64::consts::TAU, kappa: 1.0, t_final: 0.5 }
    }
}

impl WaveSetup {
    pub fn omega(&self) -> f64 {
        self.wavenumber * self.kappa.sqrt()
    }

    pub fn jet(&self, x: &Vector3<f64>, t: f64) -> NodeJet {
        let (a, k, w) = (self.amplitude, self.wavenumber, self.omega());
        let th = k * x[0] - w * t;
        NodeJet {
            material: *x,
            x: *x,
            xdot: Vector3::zeros(),
            f: Matrix3::identity(),
            nu: DVector::from_element(1, a * th.sin()),
            nudot: DVector::from_element(1, -a * w * th.cos()),
            grad_nu: DMatrix::from_row_slice(1, 3, &[a * k * th.cos(), 0.0, 0.0]),
        }
    }

    pub fn grid(&self, h: f64) -> Result<BodyGrid> {
        BodyGrid::with_spacing([0.0; 3], [1.0; 3], h, [true, false, false])
    }

    pub fn integrate(&self, h: f64, dt: f64) -> Result<(BodyGrid, IntegrationReport)> {
        let grid = self.grid(h)?;
        let manifold: Arc<dyn Manifold> = Arc::new(Circle::new(CircleDistance::Arc));
        let setup = *self;
        let init = {
            let jets: Vec<NodeJet> = grid.nodes().map(|n| setup.jet(&grid.coords(n), 0.0)).collect();
            assemble(
                &grid,
                0.0,
                &manifold,
                jets.iter().map(|j| j.x).collect(),
                jets.iter().map(|j| j.xdot).collect(),
                jets.iter().map(|j| j.nu.clone()).collect(),
                jets.iter().map(|j| j.nudot.clone()).collect(),
            )?
        };
        let opts = IntegrateOptions {
            fixed: vec![Face { axis: 0, upper: false }, Face { axis: 0, upper: true }],
            driver: Some(Arc::new(move |x, t| setup.jet(x, t))),
            sources: None,
            record_every: 1,
        };
        let rep = integrate_motion(&grid, &presets::wave(self.kappa), &init, dt, self.t_final, &opts)?;
        Ok((grid, rep))
    }
}

/// Noether residuals of the integrated wave for the order-parameter
/// rotation and for material translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveNoether {
    pub rotation: NoetherReport,
    pub translation: NoetherReport,
    pub energy_drift: f64,
}

impl WaveNoether {
    pub fn linf(&self) -> f64 {
        self.rotation.linf.max(self.translation.linf)
    }
}

pub fn noether_wave(setup: &WaveSetup, h: f64, dt: f64) -> Result<WaveNoether> {
    let (grid, rep) = setup.integrate(h, dt)?;
    let model = presets::wave(setup.kappa);
    let rotation = GeneratorSet::none().with_group(GroupTag::U1, DVector::from_element(1, 1.0));
    let translation = GeneratorSet::none().with_relabel(|_| Vector3::x());
    Ok(WaveNoether {
        rotation: noether_residual(&grid, &rep.trajectory, &model, &rotation, NodeSet::Inset(2), None)?,
        translation: noether_residual(&grid, &rep.trajectory, &model, &translation, NodeSet::Inset(2), None)?,
        energy_drift: rep.relative_drift,
    })
}

/// One refinement level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub h: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub h: f64,
    pub dt: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTable {
    pub target: String,
    pub rows: Vec<RefinementRow>,
    /// Least-squares slope of `log residual` against `log h`.
    pub order: Option<f64>,
    /// Set when residuals are not decreasing or sit at the rounding floor.
    pub indeterminate: bool,
}

/// Residuals below this are treated as rounding noise.
pub const ROUNDING_FLOOR: f64 = 1e-10;

impl RefinementTable {
    pub fn from_rows(target: impl Into<String>, rows: Vec<RefinementRow>) -> Self {
        let positive = rows.iter().all(|r| r.residual > 0.0 && r.residual.is_finite());
        let monotone = rows.windows(2).all(|w| w[1].residual < w[0].residual);
        let at_floor = rows.iter().all(|r| r.residual < ROUNDING_FLOOR);
        let order = if positive {
            let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.residual).collect();
            Some(log_log_slope(&h, &y))
        } else {
            None
        };
        Self { target: target.into(), rows, order, indeterminate: !positive || !monotone || at_floor }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,dt,residual\n");
        for r in &self.rows {
            out.push_str(&format!("{:?},{:?},{:?}\n", r.h, r.dt, r.residual));
        }
        out
    }
}

fn check_levels(levels: &[Level]) -> Result<()> {
    if levels.len() < 3 {
        return Err(Error::Input(format!("a refinement study needs at least 3 levels, got {}", levels.len())));
    }
    if levels.iter().any(|l| !(l.h > 0.0) || !(l.dt > 0.0)) {
        return Err(Error::Input("refinement levels need positive h and Δt".into()));
    }
    if levels.windows(2).any(|w| !(w[1].h < w[0].h) || w[1].dt > w[0].dt) {
        return Err(Error::Input("refinement levels must be monotonically refined".into()));
    }
    Ok(())
}

/// Runs `residual` at each level and fits the observed order.
pub fn refinement_from(target: &str, levels: &[Level], residual: impl Fn(Level) -> Result<f64>) -> Result<RefinementTable> {
    check_levels(levels)?;
    let rows = levels.iter().map(|&l| Ok(RefinementRow { h: l.h, dt: l.dt, residual: residual(l)? })).collect::<Result<Vec<_>>>()?;
    Ok(RefinementTable::from_rows(target, rows))
}

/// Registered refinement targets.
pub const REFINEMENT_TARGETS: [&str; 6] = ["affine-el", "bulk-smooth-el", "lemma1-sphere", "lemma2-sphere", "microcrack", "noether-wave"];

/// Smooth map `𝔣(y) = y + ε(sin y₂, cos y₁, y₁y₃)` with its exact gradient.
pub struct SmoothCrackMap {
    pub eps: f64,
}

impl SpatialMap for SmoothCrackMap {
    fn apply(&self, y: &Vector3<f64>) -> Vector3<f64> {
        y + Vector3::new(y[1].sin(), y[0].cos(), y[0] * y[2]) * self.eps
    }
    fn gradient(&self, y: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::identity() + Matrix3::new(0.0, y[1].cos(), 0.0, -y[0].sin(), 0.0, 0.0, y[2], 0.0, y[0]) * self.eps
    }
}

/// Nonlinear placement used by the microcrack study.
pub fn microcrack_placement(x: &Vector3<f64>) -> Vector3<f64> {
    x + Vector3::new(0.1 * x[1].sin(), 0.08 * (x[0] * x[1]).cos(), 0.05 * x[0] * x[0])
}

fn lemma_residual(h: f64, which: usize) -> Result<f64> {
    let surface = LevelSetSurface::sphere(Vector3::zeros(), 1.0)?;
    let w = CurlField::random(7, 3, 0.5);
    let a = |y: &Vector3<f64>| {
        let m = y.normalize();
        (Matrix3::identity() - m * m.transpose()) * (1.0 + 0.3 * y[0] + 0.2 * y[1] * y[2])
    };
    let st = SurfaceStencil { h };
    let mut worst: f64 = 0.0;
    for x in surface.sample_points(6)? {
        let r = interface::lemma_checks(&surface, &x, &|y| w.value(y), &a, &st)?;
        worst = worst.max(if which == 1 { r.lemma1 } else { r.lemma2 });
    }
    Ok(worst)
}

/// Evaluates a registered target residual at one level.
pub fn target_residual(target: &str, level: Level) -> Result<f64> {
    match target {
        "affine-el" => {
            let grid = BodyGrid::with_spacing([0.0; 3], [1.0; 3], level.h, [true, true, false])?;
            let manifold: Arc<dyn Manifold> = Arc::new(Euclidean::new(1)?);
            let a = Matrix3::new(1.1, 0.2, 0.0, -0.1, 0.95, 0.0, 0.0, 0.0, 1.0);
            let placement = PlacementField::from_fn(&grid, |x| a * x + Vector3::new(0.1, 0.2, 0.3));
            let order = OrderField::from_fn(&grid, manifold, |x| DVector::from_element(1, 0.3 * x[0] - 0.2 * x[1] + 0.5))?;
            let n = grid.len();
            let state = MotionState::from_fields(&grid, 0.0, &placement, vec![Vector3::zeros(); n], &order, vec![DVector::zeros(1); n])?;
            Ok(el_residuals_static(&grid, &state, &presets::bulk_smooth(2.0, 1.5, 0.0), None, NodeSet::All)?.linf())
        }
        "bulk-smooth-el" => {
            let mut case = manufactured_solution("bulk-smooth", level.h)?;
            let grid = case.grid.take().expect("bulk case has a grid");
            let traj = sampled_trajectory(&grid, &case.manifold, case.exact.as_ref().expect("exact jets"), 0.3, level.dt)?;
            let src = case.sources.as_ref().map(|s| s as &dyn BodySources);
            Ok(el_residuals(&grid, &traj, 1, case.model.as_ref(), src, NodeSet::Inset(2))?.linf())
        }
        "lemma1-sphere" => lemma_residual(level.h, 1),
        "lemma2-sphere" => lemma_residual(level.h, 2),
        "microcrack" => {
            let grid = BodyGrid::with_spacing([0.0; 3], [1.0; 3], level.h, [true, true, false])?;
            let placement = PlacementField::from_fn(&grid, microcrack_placement);
            Ok(microcrack_decomposition(&grid, &placement, &SmoothCrackMap { eps: 0.1 })?.max_residual())
        }
        "noether-wave" => Ok(noether_wave(&WaveSetup::default(), level.h, level.dt)?.linf()),
        other => Err(Error::UnknownCase(other.to_string())),
    }
}

pub fn refinement_study(target: &str, levels: &[Level]) -> Result<RefinementTable> {
    if !REFINEMENT_TARGETS.contains(&target) {
        return Err(Error::UnknownCase(target.to_string()));
    }
    refinement_from(target, levels, |l| target_residual(target, l))
}

/// Halving sequence `h₀, h₀/2, …` with `Δt = ratio·h`.
pub fn halving_levels(h0: f64, ratio: f64, count: usize) -> Vec<Level> {
    (0..count)
        .map(|i| {
            let h = h0 / 2f64.powi(i as i32);
            Level { h, dt: ratio * h }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Interval;

    fn line(n: usize) -> BodyGrid {
        BodyGrid::new([0.0; 3], [1.0; 3], [n, 1, 1]).unwrap()
    }

    #[test]
    fn option_validation() {
        let bad = SolveOptions { gradient_tol: 0.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Input(_))));
        let bad = SolveOptions { step: StepRule::Backtracking { shrink: 1.0, sufficient_decrease: 1e-4 }, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(SolveOptions::default().validate().is_ok());
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let grid = BodyGrid::new([0.0; 3], [1.0; 3], [4, 3, 1]).unwrap();
        let manifold: Arc<dyn Manifold> = Arc::new(EmbeddedSphere);
        let model = presets::isotropic_director(1.0, 2.0, 0.7).with_potential(|x, nu| 0.3 * x[0] * nu[2]);
        let x: Vec<Vector3<f64>> = grid.nodes().map(|n| grid.coords(n) * 1.05 + Vector3::new(0.01 * n as f64, 0.0, 0.0)).collect();
        let nu: Vec<DVector<f64>> = grid
            .nodes()
            .map(|n| {
                let c = grid.coords(n);
                DVector::from_column_slice(Vector3::new(c[0], c[1] - 0.5, 1.0).normalize().as_slice())
            })
            .collect();
        let ce = CellEnergy::new(&grid).unwrap();
        let (_, gx, gn) = ce.evaluate(&grid, &model, manifold.as_ref(), &x, &nu, true).unwrap();
        let h = 1e-6;
        for n in [0, 5, 11] {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[n][c] += h;
                let mut xm = x.clone();
                xm[n][c] -= h;
                let fd = (ce.evaluate(&grid, &model, manifold.as_ref(), &xp, &nu, false).unwrap().0
                    - ce.evaluate(&grid, &model, manifold.as_ref(), &xm, &nu, false).unwrap().0)
                    / (2.0 * h);
                assert!((fd - gx[n][c]).abs() < 1e-7, "x {n} {c}: {fd} vs {}", gx[n][c]);
                let mut np = nu.clone();
                np[n][c] += h;
                let mut nm = nu.clone();
                nm[n][c] -= h;
                let fd = (ce.evaluate(&grid, &model, manifold.as_ref(), &x, &np, false).unwrap().0
                    - ce.evaluate(&grid, &model, manifold.as_ref(), &x, &nm, false).unwrap().0)
                    / (2.0 * h);
                assert!((fd - gn[n][c]).abs() < 1e-7, "ν {n} {c}: {fd} vs {}", gn[n][c]);
            }
        }
        let total: f64 = grid.nodes().map(|n| ce.lumped_weight(n)).sum();
        assert!((total - grid.volume()).abs() < 1e-12);
    }

    #[test]
    fn stress_free_start_takes_no_iterations() {
        let grid = line(9);
        let r1: Arc<dyn Manifold> = Arc::new(Euclidean::new(1).unwrap());
        let order = OrderField::from_fn(&grid, r1, |_| DVector::from_element(1, 0.4)).unwrap();
        let rep = minimize_energy(&grid, &presets::bulk_smooth(1.0, 1.0, 0.0), (&PlacementField::identity(&grid), &order), &SolveOptions::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged && rep.residual < 1e-15);
    }

    #[test]
    fn geodesic_on_the_sphere() {
        let grid = line(33);
        let s2: Arc<dyn Manifold> = Arc::new(EmbeddedSphere);
        let order = OrderField::from_fn(&grid, s2, |x| {
            let t = x[0] * std::f64::consts::FRAC_PI_2;
            let v = Vector3::new(t.sin(), 0.3 * (std::f64::consts::PI * x[0]).sin(), t.cos()) + Vector3::new(0.0, 0.0, 0.1 * x[0] * (1.0 - x[0]));
            DVector::from_column_slice(v.normalize().as_slice())
        })
        .unwrap();
        let faces = vec![Face { axis: 0, upper: false }, Face { axis: 0, upper: true }];
        let opts = SolveOptions { fixed_nu: faces.clone(), fixed_x: faces, ..Default::default() };
        let rep = minimize_energy(&grid, &presets::director_gradient(1.0), (&PlacementField::identity(&grid), &order), &opts).unwrap();
        assert!(rep.converged && rep.residual < 1e-6, "{} after {}", rep.residual, rep.iterations);
        let hist = rep.energy_history();
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
        for n in grid.nodes() {
            let t = grid.coords(n)[0] * std::f64::consts::FRAC_PI_2;
            let exact = Vector3::new(t.sin(), 0.0, t.cos());
            let got = Vector3::new(rep.state.nu[n][0], rep.state.nu[n][1], rep.state.nu[n][2]);
            assert!((got - exact).norm() < 1e-4);
            assert!((got.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn double_well_forms_a_layer() {
        let kappa = 0.01;
        let grid = BodyGrid::new([-1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [81, 1, 1]).unwrap();
        let iv: Arc<dyn Manifold> = Arc::new(Interval::new(0.0, 1.0).unwrap());
        let order = OrderField::from_fn(&grid, iv, |x| {
            let base = 0.5 + 0.5 * x[0];
            DVector::from_element(1, (base + 0.2 * (7.0 * x[0]).sin() * (1.0 - x[0] * x[0])).clamp(0.0, 1.0))
        })
        .unwrap();
        let faces = vec![Face { axis: 0, upper: false }, Face { axis: 0, upper: true }];
        let opts = SolveOptions { fixed_nu: faces.clone(), fixed_x: faces, gradient_tol: 1e-8, ..Default::default() };
        let rep = minimize_energy(&grid, &presets::double_well(kappa), (&PlacementField::identity(&grid), &order), &opts).unwrap();
        assert!(rep.converged);
        assert!(rep.energy < rep.log[0].energy);
        // e = W + κ|∇ν|² with W = ν²(1−ν)² has the kink ν = ½(1 + tanh(X/(2√κ))).
        for n in grid.nodes() {
            let x = grid.coords(n)[0];
            let exact = 0.5 * (1.0 + (x / (2.0 * kappa.sqrt())).tanh());
            assert!((rep.state.nu[n][0] - exact).abs() < 2e-2, "{x}: {} vs {exact}", rep.state.nu[n][0]);
        }
    }

    #[test]
    fn stationary_and_translating_motions() {
        let grid = BodyGrid::new([0.0; 3], [1.0; 3], [6, 5, 1]).unwrap();
        let r1: Arc<dyn Manifold> = Arc::new(Euclidean::new(1).unwrap());
        let vel = Vector3::new(0.3, -0.1, 0.2);
        let init = MotionState::from_jets(&grid, 0.0, r1, |x| NodeJet {
            material: *x,
            x: *x,
            xdot: vel,
            f: Matrix3::identity(),
            nu: DVector::from_element(1, 0.2),
            nudot: DVector::zeros(1),
            grad_nu: DMatrix::zeros(1, 3),
        });
        let model = presets::bulk_smooth(1.0, 1.0, 0.0);
        let rep = integrate_motion(&grid, &model, &init, 0.01, 0.5, &IntegrateOptions::default()).unwrap();
        let last = rep.trajectory.levels.last().unwrap();
        for n in grid.nodes() {
            assert!((last.x[n] - (grid.coords(n) + vel * 0.5)).amax() < 1e-14);
            assert!((last.nu[n][0] - 0.2).abs() < 1e-15);
        }
        assert_eq!(rep.trajectory.levels.len(), 51);
    }

    #[test]
    fn standing_wave_drift_shrinks_with_step() {
        let s1: Arc<dyn Manifold> = Arc::new(Circle::new(CircleDistance::Arc));
        let grid = WaveSetup::default().grid(1.0 / 32.0).unwrap();
        let init = MotionState::from_jets(&grid, 0.0, s1, |x| NodeJet {
            material: *x,
            x: *x,
            xdot: Vector3::zeros(),
            f: Matrix3::identity(),
            nu: DVector::from_element(1, 0.3 * (std::f64::consts::TAU * x[0]).sin()),
            nudot: DVector::zeros(1),
            grad_nu: DMatrix::zeros(1, 3),
        });
        let opts = IntegrateOptions { fixed: vec![Face { axis: 0, upper: false }, Face { axis: 0, upper: true }], ..Default::default() };
        let drift = |dt: f64| integrate_motion(&grid, &presets::wave(1.0), &init, dt, 0.5, &opts).unwrap().relative_drift;
        let (coarse, fine) = (drift(1.0 / 64.0), drift(1.0 / 128.0));
        assert!(fine <= 0.5 * coarse, "{coarse} {fine}");
    }

    #[test]
    fn blow_up_is_reported() {
        let grid = line(21);
        let r1: Arc<dyn Manifold> = Arc::new(Euclidean::new(1).unwrap());
        let init = MotionState::from_jets(&grid, 0.0, r1, |x| NodeJet {
            material: *x,
            x: *x,
            xdot: Vector3::zeros(),
            f: Matrix3::identity(),
            nu: DVector::from_element(1, (20.0 * x[0]).sin() * 0.1),
            nudot: DVector::zeros(1),
            grad_nu: DMatrix::from_element(1, 3, 0.0),
        });
        let r = integrate_motion(&grid, &presets::wave(1.0), &init, 0.5, 50.0, &IntegrateOptions::default());
        assert!(matches!(r, Err(Error::Instability { .. })), "{r:?}");
    }

    #[test]
    fn singular_mass_is_a_model_error() {
        let grid = line(5);
        let r2: Arc<dyn Manifold> = Arc::new(Euclidean::new(2).unwrap());
        let model = presets::bulk_smooth(1.0, 1.0, 0.0).with_coenergy(|_, v| 0.5 * v[0] * v[0]);
        let init = MotionState::from_jets(&grid, 0.0, r2, |x| NodeJet {
            material: *x,
            x: *x,
            xdot: Vector3::zeros(),
            f: Matrix3::identity(),
            nu: DVector::zeros(2),
            nudot: DVector::zeros(2),
            grad_nu: DMatrix::zeros(2, 3),
        });
        assert!(matches!(integrate_motion(&grid, &model, &init, 0.1, 0.2, &IntegrateOptions::default()), Err(Error::Model(_))));
    }

    #[test]
    fn manufactured_cases_close() {
        assert!(matches!(manufactured_solution("vortex", 0.1), Err(Error::UnknownCase(_))));
        let tol = [("bulk-smooth", 0.05, 1e-2), ("two-phase-bar", 0.1, 1e-10), ("structured-sphere", 0.02, 1e-8), ("rigid-rotation", 0.25, 5e-3)];
        for (case, h, tol) in tol {
            let m = manufactured_solution(case, h).unwrap();
            let r = m.verify().unwrap();
            assert!(r < tol, "{case}: {r}");
        }
    }

    #[test]
    fn refinement_orders() {
        let affine = refinement_study("affine-el", &halving_levels(0.25, 0.5, 3)).unwrap();
        assert!(affine.indeterminate);
        let bulk = refinement_study("bulk-smooth-el", &halving_levels(0.1, 0.5, 3)).unwrap();
        assert!(!bulk.indeterminate && (bulk.order.unwrap() - 2.0).abs() < 0.2, "{bulk:?}");
        assert!(matches!(refinement_study("bulk-smooth-el", &halving_levels(0.1, 0.5, 2)), Err(Error::Input(_))));
        assert!(matches!(refinement_study("nope", &halving_levels(0.1, 0.5, 3)), Err(Error::UnknownCase(_))));
        let rising = RefinementTable::from_rows("t", vec![
            RefinementRow { h: 0.4, dt: 0.1, residual: 1.0 },
            RefinementRow { h: 0.2, dt: 0.1, residual: 2.0 },
            RefinementRow { h: 0.1, dt: 0.1, residual: 0.5 },
        ]);
        assert!(rising.indeterminate && rising.rows.len() == 3);
    }
}
