//! Lagrangian densities, bulk responses, Euler–Lagrange and configurational
//! residuals, Noether currents and invariance checks.
//!
//! Sign and scaling conventions, all per unit reference volume unless noted:
//! `ℒ = ρ₀(½|ẋ|² + χ − e − w)`, `P = ρ₀ ∂_F e`, `𝒮 = ρ₀ ∂_{∇ν} e`,
//! `z = ρ₀ ∂_ν e`, and per unit mass `b = −∂_x w`, `β = −∂_ν w`. With these the
//! balance forms `ρ₀ẍ = ρ₀b + Div P` and
//! `ρ₀(d/dt ∂_ν̇χ − ∂_νχ) = −z + ρ₀β + Div 𝒮` coincide with the
//! Euler–Lagrange equations of `ℒ`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{BodyGrid, MotionState, NodeJet, Trajectory};
use crate::linear::{fd_gradient, fd_gradient3, fd_gradient33, fd_gradient_matrix, fd_jacobian3, skew};
use crate::manifold::{GroupTag, Manifold};

/// Relative step for finite-difference model partials.
pub const PARTIAL_STEP: f64 = 1e-6;

/// Constitutive closures: kinetic co-energy `χ(ν, ν̇)`, elastic energy
/// `e(X, F, ν, ∇ν)` and external potential `w(x, ν)`, all per unit mass.
///
/// Partials default to central differences; models override them with
/// analytic expressions where available.
pub trait LagrangianModel: Send + Sync {
    fn name(&self) -> String;

    fn coenergy(&self, nu: &DVector<f64>, nudot: &DVector<f64>) -> f64;

    fn energy(&self, material: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, grad: &DMatrix<f64>) -> f64;

    fn potential(&self, _x: &Vector3<f64>, _nu: &DVector<f64>) -> f64 {
        0.0
    }

    fn d_coenergy_dnudot(&self, nu: &DVector<f64>, nudot: &DVector<f64>) -> DVector<f64> {
        fd_gradient(|v| self.coenergy(nu, v), nudot, PARTIAL_STEP)
    }

    fn d_coenergy_dnu(&self, nu: &DVector<f64>, nudot: &DVector<f64>) -> DVector<f64> {
        fd_gradient(|v| self.coenergy(v, nudot), nu, PARTIAL_STEP)
    }

    fn d_energy_df(&self, material: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, grad: &DMatrix<f64>) -> Matrix3<f64> {
        fd_gradient33(|m| self.energy(material, m, nu, grad), f, PARTIAL_STEP)
    }

    fn d_energy_dnu(&self, material: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, grad: &DMatrix<f64>) -> DVector<f64> {
        fd_gradient(|v| self.energy(material, f, v, grad), nu, PARTIAL_STEP)
    }

    fn d_energy_dgrad(&self, material: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, grad: &DMatrix<f64>) -> DMatrix<f64> {
        fd_gradient_matrix(|g| self.energy(material, f, nu, g), grad, PARTIAL_STEP)
    }

    /// Explicit dependence of `e` on the material point.
    fn d_energy_dmaterial(&self, material: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, grad: &DMatrix<f64>) -> Vector3<f64> {
        fd_gradient3(|x| self.energy(x, f, nu, grad), material, PARTIAL_STEP)
    }

    fn d_potential_dx(&self, x: &Vector3<f64>, nu: &DVector<f64>) -> Vector3<f64> {
        fd_gradient3(|y| self.potential(y, nu), x, PARTIAL_STEP)
    }

    fn d_potential_dnu(&self, x: &Vector3<f64>, nu: &DVector<f64>) -> DVector<f64> {
        fd_gradient(|v| self.potential(x, v), nu, PARTIAL_STEP)
    }
}

/// Values and partials of the three model closures at one jet.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPartials {
    pub chi: f64,
    pub e: f64,
    pub w: f64,
    pub dchi_dnudot: DVector<f64>,
    pub dchi_dnu: DVector<f64>,
    pub de_df: Matrix3<f64>,
    pub de_dnu: DVector<f64>,
    pub de_dgrad: DMatrix<f64>,
    pub de_dmaterial: Vector3<f64>,
    pub dw_dx: Vector3<f64>,
    pub dw_dnu: DVector<f64>,
}

impl ModelPartials {
    /// Partials as supplied by the model (analytic where registered).
    pub fn of(model: &dyn LagrangianModel, jet: &NodeJet) -> Self {
        let (xm, f, nu, nd, g) = (&jet.material, &jet.f, &jet.nu, &jet.nudot, &jet.grad_nu);
        Self {
            chi: model.coenergy(nu, nd),
            e: model.energy(xm, f, nu, g),
            w: model.potential(&jet.x, nu),
            dchi_dnudot: model.d_coenergy_dnudot(nu, nd),
            dchi_dnu: model.d_coenergy_dnu(nu, nd),
            de_df: model.d_energy_df(xm, f, nu, g),
            de_dnu: model.d_energy_dnu(xm, f, nu, g),
            de_dgrad: model.d_energy_dgrad(xm, f, nu, g),
            de_dmaterial: model.d_energy_dmaterial(xm, f, nu, g),
            dw_dx: model.d_potential_dx(&jet.x, nu),
            dw_dnu: model.d_potential_dnu(&jet.x, nu),
        }
    }

    /// Partials by central differences of the value closures only, ignoring
    /// any analytic overrides.
    pub fn finite_difference(model: &dyn LagrangianModel, jet: &NodeJet, rel: f64) -> Self {
        let (xm, f, nu, nd, g) = (&jet.material, &jet.f, &jet.nu, &jet.nudot, &jet.grad_nu);
        Self {
            chi: model.coenergy(nu, nd),
            e: model.energy(xm, f, nu, g),
            w: model.potential(&jet.x, nu),
            dchi_dnudot: fd_gradient(|v| model.coenergy(nu, v), nd, rel),
            dchi_dnu: fd_gradient(|v| model.coenergy(v, nd), nu, rel),
            de_df: fd_gradient33(|m| model.energy(xm, m, nu, g), f, rel),
            de_dnu: fd_gradient(|v| model.energy(xm, f, v, g), nu, rel),
            de_dgrad: fd_gradient_matrix(|m| model.energy(xm, f, nu, m), g, rel),
            de_dmaterial: fd_gradient3(|x| model.energy(x, f, nu, g), xm, rel),
            dw_dx: fd_gradient3(|y| model.potential(y, nu), &jet.x, rel),
            dw_dnu: fd_gradient(|v| model.potential(&jet.x, v), nu, rel),
        }
    }

    /// Largest absolute difference across all partials.
    pub fn max_partial_difference(&self, other: &Self) -> f64 {
        [
            (&self.dchi_dnudot - &other.dchi_dnudot).amax(),
            (&self.dchi_dnu - &other.dchi_dnu).amax(),
            (self.de_df - other.de_df).amax(),
            (&self.de_dnu - &other.de_dnu).amax(),
            (&self.de_dgrad - &other.de_dgrad).amax(),
            (self.de_dmaterial - other.de_dmaterial).amax(),
            (self.dw_dx - other.dw_dx).amax(),
            (&self.dw_dnu - &other.dw_dnu).amax(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Partials of `ℒ` with respect to every jet entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianPartials {
    pub value: f64,
    pub dx: Vector3<f64>,
    pub dxdot: Vector3<f64>,
    pub df: Matrix3<f64>,
    pub dnu: DVector<f64>,
    pub dnudot: DVector<f64>,
    pub dgrad: DMatrix<f64>,
    /// Explicit material derivative, including the density gradient.
    pub dmaterial: Vector3<f64>,
}

impl LagrangianPartials {
    pub fn from_model(mp: &ModelPartials, jet: &NodeJet, rho0: f64, grad_rho0: &Vector3<f64>) -> Self {
        let specific = 0.5 * jet.xdot.norm_squared() + mp.chi - mp.e - mp.w;
        Self {
            value: rho0 * specific,
            dx: -rho0 * mp.dw_dx,
            dxdot: rho0 * jet.xdot,
            df: -rho0 * mp.de_df,
            dnu: (&mp.dchi_dnu - &mp.de_dnu - &mp.dw_dnu) * rho0,
            dnudot: &mp.dchi_dnudot * rho0,
            dgrad: &mp.de_dgrad * (-rho0),
            dmaterial: grad_rho0 * specific - rho0 * mp.de_dmaterial,
        }
    }
}

/// Bulk interactions at a node.
#[derive(Debug, Clone, PartialEq)]
pub struct BulkResponses {
    /// First Piola–Kirchhoff stress `ρ₀ ∂_F e`.
    pub p: Matrix3<f64>,
    /// Microstress `ρ₀ ∂_{∇ν} e`.
    pub s: DMatrix<f64>,
    /// Self-force `ρ₀ ∂_ν e`.
    pub z: DVector<f64>,
    /// Body force per unit mass `−∂_x w`.
    pub b: Vector3<f64>,
    /// Non-inertial substructural action per unit mass `−∂_ν w`.
    pub beta: DVector<f64>,
}

impl BulkResponses {
    pub fn from_model(mp: &ModelPartials, rho0: f64) -> Self {
        Self {
            p: rho0 * mp.de_df,
            s: &mp.de_dgrad * rho0,
            z: &mp.de_dnu * rho0,
            b: -mp.dw_dx,
            beta: -&mp.dw_dnu,
        }
    }
}

fn grad_rho(grid: &BodyGrid) -> Vec<Vector3<f64>> {
    let rho: Vec<f64> = grid.nodes().map(|n| grid.rho0(n)).collect();
    grid.nodes().map(|n| grid.gradient_scalar(&rho, n)).collect()
}

fn check_state(grid: &BodyGrid, state: &MotionState) -> Result<()> {
    grid.check_len(state.len(), "motion state")
}

fn partials_field(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel) -> Vec<ModelPartials> {
    grid.nodes().map(|n| ModelPartials::of(model, &state.jet(grid, n))).collect()
}

/// Nodal Lagrangian density.
pub fn lagrangian_density(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel) -> Result<Vec<f64>> {
    check_state(grid, state)?;
    Ok(grid
        .nodes()
        .map(|n| {
            let jet = state.jet(grid, n);
            let specific = 0.5 * jet.xdot.norm_squared() + model.coenergy(&jet.nu, &jet.nudot)
                - model.energy(&jet.material, &jet.f, &jet.nu, &jet.grad_nu)
                - model.potential(&jet.x, &jet.nu);
            grid.rho0(n) * specific
        })
        .collect())
}

/// Quadrature of the Lagrangian density over the body.
pub fn total_lagrangian(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel) -> Result<f64> {
    let l = lagrangian_density(grid, state, model)?;
    Ok(grid.nodes().map(|n| grid.weight(n) * l[n]).sum())
}

pub fn bulk_responses(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel) -> Result<Vec<BulkResponses>> {
    check_state(grid, state)?;
    Ok(partials_field(grid, state, model).iter().enumerate().map(|(n, mp)| BulkResponses::from_model(mp, grid.rho0(n))).collect())
}

/// `ℙ = ρ₀ e I − Fᵀ P − (∇ν)ᵀ 𝒮` at one jet.
pub fn eshelby_at(mp: &ModelPartials, jet: &NodeJet, rho0: f64) -> Matrix3<f64> {
    let r = BulkResponses::from_model(mp, rho0);
    let gs = jet.grad_nu.transpose() * &r.s;
    Matrix3::identity() * (rho0 * mp.e) - jet.f.transpose() * r.p - Matrix3::from_fn(|i, j| gs[(i, j)])
}

pub fn eshelby_tensor(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel) -> Result<Vec<Matrix3<f64>>> {
    check_state(grid, state)?;
    Ok(grid
        .nodes()
        .map(|n| {
            let jet = state.jet(grid, n);
            eshelby_at(&ModelPartials::of(model, &jet), &jet, grid.rho0(n))
        })
        .collect())
}

/// External sources added to the balance equations, per unit reference volume.
pub trait BodySources: Send + Sync {
    fn force(&self, material: &Vector3<f64>, t: f64) -> Vector3<f64>;
    fn order_source(&self, material: &Vector3<f64>, t: f64) -> DVector<f64>;
}

/// Sources given by closures.
#[derive(Clone)]
pub struct ClosureSources {
    pub force: Arc<dyn Fn(&Vector3<f64>, f64) -> Vector3<f64> + Send + Sync>,
    pub order: Arc<dyn Fn(&Vector3<f64>, f64) -> DVector<f64> + Send + Sync>,
}

impl BodySources for ClosureSources {
    fn force(&self, material: &Vector3<f64>, t: f64) -> Vector3<f64> {
        (self.force)(material, t)
    }
    fn order_source(&self, material: &Vector3<f64>, t: f64) -> DVector<f64> {
        (self.order)(material, t)
    }
}

/// Nodal Euler–Lagrange residuals with a mask of the nodes used for norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ElResidual {
    pub rx: Vec<Vector3<f64>>,
    pub rnu: Vec<DVector<f64>>,
    pub mask: Vec<bool>,
}

impl ElResidual {
    pub fn linf_x(&self) -> f64 {
        self.rx.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(r, _)| r.amax()).fold(0.0, f64::max)
    }

    pub fn linf_nu(&self) -> f64 {
        self.rnu.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(r, _)| r.amax()).fold(0.0, f64::max)
    }

    pub fn linf(&self) -> f64 {
        self.linf_x().max(self.linf_nu())
    }

    /// Quadrature-weighted L² norm over masked nodes.
    pub fn l2(&self, grid: &BodyGrid) -> f64 {
        grid.nodes()
            .filter(|&n| self.mask[n])
            .map(|n| grid.weight(n) * (self.rx[n].norm_squared() + self.rnu[n].norm_squared()))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean norm of the combined nodal residual `(r_x, r_ν)`; zero off the mask.
    /// Unlike the component maxima these are invariant under rotations.
    pub fn node_norms(&self) -> Vec<f64> {
        (0..self.rx.len())
            .map(|n| if self.mask[n] { (self.rx[n].norm_squared() + self.rnu[n].norm_squared()).sqrt() } else { 0.0 })
            .collect()
    }

    pub fn max_node_norm(&self) -> f64 {
        self.node_norms().into_iter().fold(0.0, f64::max)
    }

    /// Largest nodewise difference to another residual.
    pub fn max_difference(&self, other: &Self) -> f64 {
        let dx = self.rx.iter().zip(&other.rx).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        let dn = self.rnu.iter().zip(&other.rnu).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        dx.max(dn)
    }
}

/// Which nodes enter residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeSet {
    /// Nodes off the active boundary faces.
    #[default]
    Interior,
    All,
    /// Nodes at least this many index steps from every active face, so that
    /// one-sided face stencils do not enter the divergence.
    Inset(usize),
}

impl NodeSet {
    pub fn mask(self, grid: &BodyGrid) -> Vec<bool> {
        match self {
            NodeSet::All => vec![true; grid.len()],
            NodeSet::Interior => grid.nodes().map(|n| !grid.on_boundary(n)).collect(),
            NodeSet::Inset(depth) => {
                let mut mask = vec![false; grid.len()];
                for n in grid.interior_nodes(depth) {
                    mask[n] = true;
                }
                mask
            }
        }
    }
}

/// Time-rate data for the inertial terms at the level being checked.
struct Rates {
    /// `d/dt ẋ` (central difference of stored velocities).
    xddot: Vec<Vector3<f64>>,
    /// `d/dt (ρ₀ ẋ)`.
    dmomentum: Vec<Vector3<f64>>,
    /// `d/dt ∂_ν̇χ` in chart coordinates.
    dpi: Vec<DVector<f64>>,
}

fn central_rates(grid: &BodyGrid, traj: &Trajectory, level: usize, model: &dyn LagrangianModel) -> Result<Rates> {
    traj.require_central(level)?;
    let (prev, next) = (&traj.levels[level - 1], &traj.levels[level + 1]);
    check_state(grid, prev)?;
    check_state(grid, next)?;
    let two_dt = 2.0 * traj.dt;
    Ok(Rates {
        xddot: grid.nodes().map(|n| (next.xdot[n] - prev.xdot[n]) / two_dt).collect(),
        dmomentum: grid.nodes().map(|n| (next.xdot[n] * grid.rho0(n) - prev.xdot[n] * grid.rho0(n)) / two_dt).collect(),
        dpi: grid
            .nodes()
            .map(|n| {
                (model.d_coenergy_dnudot(&next.nu[n], &next.nudot[n]) - model.d_coenergy_dnudot(&prev.nu[n], &prev.nudot[n])) / two_dt
            })
            .collect(),
    })
}

fn static_rates(grid: &BodyGrid, state: &MotionState) -> Rates {
    let dim = state.manifold.dim();
    Rates {
        xddot: vec![Vector3::zeros(); grid.len()],
        dmomentum: vec![Vector3::zeros(); grid.len()],
        dpi: vec![DVector::zeros(dim); grid.len()],
    }
}

fn balance_form(
    grid: &BodyGrid,
    state: &MotionState,
    model: &dyn LagrangianModel,
    rates: &Rates,
    sources: Option<&dyn BodySources>,
    nodes: NodeSet,
) -> Result<ElResidual> {
    check_state(grid, state)?;
    let mps = partials_field(grid, state, model);
    let resp: Vec<BulkResponses> = mps.iter().enumerate().map(|(n, mp)| BulkResponses::from_model(mp, grid.rho0(n))).collect();
    let p: Vec<Matrix3<f64>> = resp.iter().map(|r| r.p).collect();
    let s: Vec<DMatrix<f64>> = resp.iter().map(|r| r.s.clone()).collect();
    let m = state.manifold.as_ref();
    let mut rx = Vec::with_capacity(grid.len());
    let mut rnu = Vec::with_capacity(grid.len());
    for n in grid.nodes() {
        let rho = grid.rho0(n);
        let mut r = rates.xddot[n] * rho - resp[n].b * rho - grid.divergence_tensor(&p, n);
        let mut q = (&rates.dpi[n] - &mps[n].dchi_dnu) * rho + &resp[n].z - &resp[n].beta * rho - grid.divergence_rows(&s, n);
        if let Some(src) = sources {
            let xm = grid.coords(n);
            r -= src.force(&xm, state.t);
            q -= src.order_source(&xm, state.t);
        }
        rx.push(r);
        rnu.push(m.project_tangent(&state.nu[n], &q));
    }
    Ok(ElResidual { rx, rnu, mask: nodes.mask(grid) })
}

fn lagrangian_form(
    grid: &BodyGrid,
    state: &MotionState,
    model: &dyn LagrangianModel,
    rates: &Rates,
    sources: Option<&dyn BodySources>,
    nodes: NodeSet,
) -> Result<ElResidual> {
    check_state(grid, state)?;
    let gr = grad_rho(grid);
    let lp: Vec<LagrangianPartials> = grid
        .nodes()
        .map(|n| {
            let jet = state.jet(grid, n);
            LagrangianPartials::from_model(&ModelPartials::of(model, &jet), &jet, grid.rho0(n), &gr[n])
        })
        .collect();
    let df: Vec<Matrix3<f64>> = lp.iter().map(|l| l.df).collect();
    let dg: Vec<DMatrix<f64>> = lp.iter().map(|l| l.dgrad.clone()).collect();
    let m = state.manifold.as_ref();
    let mut rx = Vec::with_capacity(grid.len());
    let mut rnu = Vec::with_capacity(grid.len());
    for n in grid.nodes() {
        // d/dt ∂_ẋℒ − ∂_xℒ + Div ∂_Fℒ
        let mut r = rates.dmomentum[n] - lp[n].dx + grid.divergence_tensor(&df, n);
        let mut q = &rates.dpi[n] * grid.rho0(n) - &lp[n].dnu + grid.divergence_rows(&dg, n);
        if let Some(src) = sources {
            let xm = grid.coords(n);
            r -= src.force(&xm, state.t);
            q -= src.order_source(&xm, state.t);
        }
        rx.push(r);
        rnu.push(m.project_tangent(&state.nu[n], &q));
    }
    Ok(ElResidual { rx, rnu, mask: nodes.mask(grid) })
}

/// Residuals of `ρ₀ẍ = ρ₀b + Div P` and
/// `ρ₀(d/dt ∂_ν̇χ − ∂_νχ) = −z + ρ₀β + Div 𝒮` at time level `level`.
///
/// Time derivatives are central differences of the stored rates at the
/// neighbouring levels; `d/dt ∂_ν̇χ` is taken componentwise in the chart.
/// On embedded manifolds the order-parameter residual is projected onto the
/// tangent space.
pub fn el_residuals(
    grid: &BodyGrid,
    traj: &Trajectory,
    level: usize,
    model: &dyn LagrangianModel,
    sources: Option<&dyn BodySources>,
    nodes: NodeSet,
) -> Result<ElResidual> {
    let rates = central_rates(grid, traj, level, model)?;
    balance_form(grid, &traj.levels[level], model, &rates, sources, nodes)
}

/// The same residuals written directly as Euler–Lagrange equations of `ℒ`:
/// `d/dt ∂_ẋℒ − ∂_xℒ + Div ∂_Fℒ` and `d/dt ∂_ν̇ℒ − ∂_νℒ + Div ∂_{∇ν}ℒ`.
pub fn el_residuals_lagrangian(
    grid: &BodyGrid,
    traj: &Trajectory,
    level: usize,
    model: &dyn LagrangianModel,
    sources: Option<&dyn BodySources>,
    nodes: NodeSet,
) -> Result<ElResidual> {
    let rates = central_rates(grid, traj, level, model)?;
    lagrangian_form(grid, &traj.levels[level], model, &rates, sources, nodes)
}

/// Balance-form residuals of a static state (inertial terms dropped).
pub fn el_residuals_static(
    grid: &BodyGrid,
    state: &MotionState,
    model: &dyn LagrangianModel,
    sources: Option<&dyn BodySources>,
    nodes: NodeSet,
) -> Result<ElResidual> {
    balance_form(grid, state, model, &static_rates(grid, state), sources, nodes)
}

/// Lagrangian-form residuals of a static state.
pub fn el_residuals_lagrangian_static(
    grid: &BodyGrid,
    state: &MotionState,
    model: &dyn LagrangianModel,
    sources: Option<&dyn BodySources>,
    nodes: NodeSet,
) -> Result<ElResidual> {
    lagrangian_form(grid, state, model, &static_rates(grid, state), sources, nodes)
}

/// Integral of the static substructural balance `z − ρ₀β − Div 𝒮` over the
/// body. Only defined when the manifold is a linear space.
pub fn integral_substructural_balance(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel) -> Result<DVector<f64>> {
    if !state.manifold.is_linear() {
        return Err(Error::UnsupportedAction(format!(
            "integral balance of substructural interactions needs a linear manifold, {} is not",
            state.manifold.tag()
        )));
    }
    let r = el_residuals_static(grid, state, model, None, NodeSet::All)?;
    let mut total = DVector::zeros(state.manifold.dim());
    for n in grid.nodes() {
        total += &r.rnu[n] * grid.weight(n);
    }
    Ok(total)
}

type VecField = Arc<dyn Fn(&Vector3<f64>) -> Vector3<f64> + Send + Sync>;

/// Generators of relabeling (`w` on the body), spatial changes (`v` on the
/// ambient space) and group actions on the manifold (`ξ`).
#[derive(Clone, Default)]
pub struct GeneratorSet {
    pub relabel: Option<VecField>,
    pub spatial: Option<VecField>,
    pub group: Option<(GroupTag, DVector<f64>)>,
}

impl GeneratorSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_relabel(mut self, w: impl Fn(&Vector3<f64>) -> Vector3<f64> + Send + Sync + 'static) -> Self {
        self.relabel = Some(Arc::new(w));
        self
    }

    pub fn with_spatial(mut self, v: impl Fn(&Vector3<f64>) -> Vector3<f64> + Send + Sync + 'static) -> Self {
        self.spatial = Some(Arc::new(v));
        self
    }

    pub fn with_group(mut self, group: GroupTag, xi: DVector<f64>) -> Self {
        self.group = Some((group, xi));
        self
    }

    /// Rejects relabeling fields that are not divergence-free at the nodes.
    pub fn validate(&self, grid: &BodyGrid, manifold: &dyn Manifold) -> Result<()> {
        if let Some(w) = &self.relabel {
            for n in grid.nodes() {
                let x = grid.coords(n);
                let div = fd_jacobian3(|y| w(y), &x, 1e-5).trace();
                let scale = w(&x).norm().max(1.0);
                if div.abs() > 1e-6 * scale {
                    return Err(Error::Input(format!("relabeling field is not isochoric at node {n}: Div w = {div:e}")));
                }
            }
        }
        if let Some((g, xi)) = &self.group {
            if !manifold.groups().contains(g) {
                return Err(Error::UnsupportedAction(format!("group {g} is not registered on {}", manifold.tag())));
            }
            if xi.len() != g.algebra_dim(manifold.dim()) {
                return Err(Error::Input(format!("algebra element for {g} has wrong length")));
            }
        }
        Ok(())
    }
}

/// Noether density `𝒬` and flux `𝔉` from Lagrangian partials at a jet.
pub fn noether_at(
    lp: &LagrangianPartials,
    jet: &NodeJet,
    gens: &GeneratorSet,
    manifold: &dyn Manifold,
) -> Result<(f64, Vector3<f64>)> {
    let w = gens.relabel.as_ref().map(|f| f(&jet.material)).unwrap_or_else(Vector3::zeros);
    let v = gens.spatial.as_ref().map(|f| f(&jet.x)).unwrap_or_else(Vector3::zeros);
    let xi_m = match &gens.group {
        Some((g, xi)) => manifold.generator(*g, xi, &jet.nu)?,
        None => DVector::zeros(manifold.dim()),
    };
    let a = v - jet.f * w;
    let b = xi_m - &jet.grad_nu * DVector::from_column_slice(w.as_slice());
    let q = lp.dxdot.dot(&a) + lp.dnudot.dot(&b);
    let gb = lp.dgrad.transpose() * &b;
    let flux = w * lp.value + lp.df.transpose() * a + Vector3::new(gb[0], gb[1], gb[2]);
    Ok((q, flux))
}

pub fn noether_fields(
    grid: &BodyGrid,
    state: &MotionState,
    model: &dyn LagrangianModel,
    gens: &GeneratorSet,
) -> Result<Vec<(f64, Vector3<f64>)>> {
    check_state(grid, state)?;
    gens.validate(grid, state.manifold.as_ref())?;
    let gr = grad_rho(grid);
    grid.nodes()
        .map(|n| {
            let jet = state.jet(grid, n);
            let lp = LagrangianPartials::from_model(&ModelPartials::of(model, &jet), &jet, grid.rho0(n), &gr[n]);
            noether_at(&lp, &jet, gens, state.manifold.as_ref())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoetherReport {
    /// Time levels at which the residual was evaluated.
    pub levels: Vec<usize>,
    /// `𝒬̇ + Div 𝔉` per evaluated level and node (masked nodes only carry values).
    pub residual: Vec<Vec<f64>>,
    pub linf: f64,
    /// Space-time L² norm.
    pub l2: f64,
    /// Largest Euler–Lagrange residual over the same levels.
    pub el_linf: f64,
    /// Set when a supplied invariance check failed; the residual is still reported.
    pub precondition_violation: bool,
}

/// `𝒬̇ + Div 𝔉` over all levels with central neighbours.
pub fn noether_residual(
    grid: &BodyGrid,
    traj: &Trajectory,
    model: &dyn LagrangianModel,
    gens: &GeneratorSet,
    nodes: NodeSet,
    invariance: Option<&InvarianceReport>,
) -> Result<NoetherReport> {
    if traj.levels.len() < 3 {
        return Err(Error::Input("Noether residual needs at least 3 time levels".into()));
    }
    let fields: Vec<Vec<(f64, Vector3<f64>)>> =
        traj.levels.iter().map(|s| noether_fields(grid, s, model, gens)).collect::<Result<_>>()?;
    let mask = nodes.mask(grid);
    let mut residual = Vec::new();
    let mut levels = Vec::new();
    let mut linf: f64 = 0.0;
    let mut l2 = 0.0;
    let mut el_linf: f64 = 0.0;
    for level in 1..traj.levels.len() - 1 {
        let flux: Vec<Vector3<f64>> = fields[level].iter().map(|(_, f)| *f).collect();
        let r: Vec<f64> = grid
            .nodes()
            .map(|n| {
                if !mask[n] {
                    return 0.0;
                }
                (fields[level + 1][n].0 - fields[level - 1][n].0) / (2.0 * traj.dt) + grid.divergence_vector(&flux, n)
            })
            .collect();
        for n in grid.nodes().filter(|&n| mask[n]) {
            linf = linf.max(r[n].abs());
            l2 += grid.weight(n) * traj.dt * r[n] * r[n];
        }
        el_linf = el_linf.max(el_residuals(grid, traj, level, model, None, nodes)?.linf());
        residual.push(r);
        levels.push(level);
    }
    Ok(NoetherReport {
        levels,
        residual,
        linf,
        l2: l2.sqrt(),
        el_linf,
        precondition_violation: invariance.map_or(false, |r| !r.pass),
    })
}

/// Residual of the frame-indifference identity for the elastic energy:
/// `skw(∂_F e Fᵀ)_{ij} − ½ ε_{ijk} u_k` with
/// `u_k = ∂_ν e · ξ_M(ν)[e_k] + ∂_{∇ν} e : (Dξ_M[e_k] ∇ν)`.
pub fn rotational_invariance_residual(model: &dyn LagrangianModel, manifold: &dyn Manifold, jet: &NodeJet) -> Result<Matrix3<f64>> {
    if !manifold.groups().contains(&GroupTag::SO3) {
        return Err(Error::UnsupportedAction(format!("{} carries no SO(3) action", manifold.tag())));
    }
    let (xm, f, nu, g) = (&jet.material, &jet.f, &jet.nu, &jet.grad_nu);
    let de_df = model.d_energy_df(xm, f, nu, g);
    let de_dnu = model.d_energy_dnu(xm, f, nu, g);
    let de_dg = model.d_energy_dgrad(xm, f, nu, g);
    let s = de_df * f.transpose();
    let skw = (s - s.transpose()) * 0.5;
    let mut u = Vector3::zeros();
    for k in 0..3 {
        let ek = DVector::from_column_slice(Vector3::ith(k, 1.0).as_slice());
        let gen = manifold.generator(GroupTag::SO3, &ek, nu)?;
        let dgen = manifold.generator_jacobian(GroupTag::SO3, &ek, nu)?;
        u[k] = de_dnu.dot(&gen) + de_dg.dot(&(dgen * g));
    }
    // ½ ε_{ijk} u_k = −½ skew(u)_{ij}
    Ok(skw + skew(&u) * 0.5)
}

pub fn rotational_invariance_field(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel) -> Result<Vec<Matrix3<f64>>> {
    check_state(grid, state)?;
    grid.nodes().map(|n| rotational_invariance_residual(model, state.manifold.as_ref(), &state.jet(grid, n))).collect()
}

/// Configurational balance residuals at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigBalance {
    /// `−d/dt(Fᵀ∂_ẋℒ + ∇νᵀ∂_ν̇ℒ) − Div(ℙ − (½ρ₀|ẋ|² + ρ₀χ)I) − ∂_Xℒ`,
    /// which equals `−(Fᵀ r_x + ∇νᵀ r_ν) + ∇(ρ₀ w)` for any motion.
    pub residual: Vec<Vector3<f64>>,
    /// The same expression with `+d/dt(…)`.
    pub with_positive_rate: Vec<Vector3<f64>>,
    pub mask: Vec<bool>,
}

impl ConfigBalance {
    pub fn linf(&self) -> f64 {
        self.residual.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(r, _)| r.amax()).fold(0.0, f64::max)
    }
}

fn pseudomomentum(lp: &LagrangianPartials, jet: &NodeJet) -> Vector3<f64> {
    let g = jet.grad_nu.transpose() * &lp.dnudot;
    jet.f.transpose() * lp.dxdot + Vector3::new(g[0], g[1], g[2])
}

fn config_core(
    grid: &BodyGrid,
    state: &MotionState,
    model: &dyn LagrangianModel,
    rate: Vec<Vector3<f64>>,
    nodes: NodeSet,
) -> Result<ConfigBalance> {
    let gr = grad_rho(grid);
    let mut stress = Vec::with_capacity(grid.len());
    let mut dmat = Vec::with_capacity(grid.len());
    for n in grid.nodes() {
        let jet = state.jet(grid, n);
        let mp = ModelPartials::of(model, &jet);
        let lp = LagrangianPartials::from_model(&mp, &jet, grid.rho0(n), &gr[n]);
        let kinetic = grid.rho0(n) * (0.5 * jet.xdot.norm_squared() + mp.chi);
        stress.push(eshelby_at(&mp, &jet, grid.rho0(n)) - Matrix3::identity() * kinetic);
        dmat.push(lp.dmaterial);
    }
    let mut residual = Vec::with_capacity(grid.len());
    let mut with_positive_rate = Vec::with_capacity(grid.len());
    for n in grid.nodes() {
        let base = -grid.divergence_tensor(&stress, n) - dmat[n];
        residual.push(base - rate[n]);
        with_positive_rate.push(base + rate[n]);
    }
    Ok(ConfigBalance { residual, with_positive_rate, mask: nodes.mask(grid) })
}

/// Balance of configurational forces at an interior time level.
pub fn config_balance_residual(
    grid: &BodyGrid,
    traj: &Trajectory,
    level: usize,
    model: &dyn LagrangianModel,
    nodes: NodeSet,
) -> Result<ConfigBalance> {
    traj.require_central(level)?;
    let gr = grad_rho(grid);
    let pm = |s: &MotionState| -> Vec<Vector3<f64>> {
        grid.nodes()
            .map(|n| {
                let jet = s.jet(grid, n);
                pseudomomentum(&LagrangianPartials::from_model(&ModelPartials::of(model, &jet), &jet, grid.rho0(n), &gr[n]), &jet)
            })
            .collect()
    };
    let (a, b) = (pm(&traj.levels[level - 1]), pm(&traj.levels[level + 1]));
    let rate = grid.nodes().map(|n| (b[n] - a[n]) / (2.0 * traj.dt)).collect();
    config_core(grid, &traj.levels[level], model, rate, nodes)
}

/// Configurational balance of a static state.
pub fn config_balance_static(grid: &BodyGrid, state: &MotionState, model: &dyn LagrangianModel, nodes: NodeSet) -> Result<ConfigBalance> {
    check_state(grid, state)?;
    config_core(grid, state, model, vec![Vector3::zeros(); grid.len()], nodes)
}

/// Relabeling families `f¹_s` of the reference body.
#[derive(Clone)]
pub enum Relabel {
    Translation(Vector3<f64>),
    /// `X ↦ exp(sA)(X − X₀) + X₀`; `A` must be traceless.
    Linear { a: Matrix3<f64>, origin: Vector3<f64> },
    /// Flow of a divergence-free field, integrated with RK4.
    Flow { field: VecField, steps: usize },
}

/// Rigid changes `f²_s` of the ambient space.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialChange {
    Translation(Vector3<f64>),
    /// `x ↦ exp(sA)(x − x₀) + x₀`; `A` must be skew.
    Linear { a: Matrix3<f64>, origin: Vector3<f64> },
}

/// Simultaneous relabeling, spatial change and group action, each scaled by `s`.
#[derive(Clone, Default)]
pub struct InvarianceTransform {
    pub relabel: Option<Relabel>,
    pub spatial: Option<SpatialChange>,
    pub group: Option<(GroupTag, DVector<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// `(s, max |ℒ(transformed) − ℒ|)` per parameter value.
    pub deviations: Vec<(f64, f64)>,
    pub max_deviation: f64,
    pub pass: bool,
}

/// Parameter values used by [`invariance_check`].
pub const INVARIANCE_PARAMETERS: [f64; 3] = [1e-3, 1e-2, 1e-1];

/// Pass threshold at parameter `s`: `1e-10 + 1e-6 s²`.
pub fn invariance_tolerance(s: f64) -> f64 {
    1e-10 + 1e-6 * s * s
}

fn flow_map(field: &VecField, x: &Vector3<f64>, s: f64, steps: usize) -> (Vector3<f64>, Matrix3<f64>) {
    let h = s / steps as f64;
    let grad = |y: &Vector3<f64>| fd_jacobian3(|z| field(z), y, 1e-5);
    let mut p = *x;
    let mut j = Matrix3::identity();
    for _ in 0..steps {
        let k1p = field(&p);
        let k1j = grad(&p) * j;
        let p2 = p + k1p * (0.5 * h);
        let k2p = field(&p2);
        let k2j = grad(&p2) * (j + k1j * (0.5 * h));
        let p3 = p + k2p * (0.5 * h);
        let k3p = field(&p3);
        let k3j = grad(&p3) * (j + k2j * (0.5 * h));
        let p4 = p + k3p * h;
        let k4p = field(&p4);
        let k4j = grad(&p4) * (j + k3j * h);
        p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
        j += (k1j + k2j * 2.0 + k3j * 2.0 + k4j) * (h / 6.0);
    }
    (p, j)
}

fn matrix_exp(a: &Matrix3<f64>) -> Matrix3<f64> {
    a.exp()
}

/// Jacobian of `ν ↦ g·ν` in the chart.
fn group_jacobian(manifold: &dyn Manifold, group: GroupTag, xi: &DVector<f64>, nu: &DVector<f64>) -> Result<DMatrix<f64>> {
    if group == GroupTag::SO3 {
        return crate::kinematics::action_jacobian(manifold, xi, nu);
    }
    let n = manifold.dim();
    let base = manifold.act(group, xi, nu)?;
    let mut jac = DMatrix::zeros(n, n);
    for c in 0..n {
        let h = 1e-6 * nu[c].abs().max(1.0);
        let mut p = nu.clone();
        p[c] += h;
        let fp = manifold.act(group, xi, &p)?;
        p[c] = nu[c] - h;
        let fm = manifold.act(group, xi, &p)?;
        jac.set_column(c, &((manifold.chart_difference(&base, &fp) - manifold.chart_difference(&base, &fm)) / (2.0 * h)));
    }
    Ok(jac)
}

/// Lagrangian density at a jet with density closure `rho0`.
pub fn lagrangian_at(model: &dyn LagrangianModel, rho0: f64, jet: &NodeJet) -> f64 {
    rho0 * (0.5 * jet.xdot.norm_squared() + model.coenergy(&jet.nu, &jet.nudot)
        - model.energy(&jet.material, &jet.f, &jet.nu, &jet.grad_nu)
        - model.potential(&jet.x, &jet.nu))
}

/// Compares `ℒ` before and after a finite transform at every sample jet,
/// for `s ∈ {1e-3, 1e-2, 1e-1}`.
pub fn invariance_check(
    model: &dyn LagrangianModel,
    manifold: &dyn Manifold,
    rho0: &dyn Fn(&Vector3<f64>) -> f64,
    transform: &InvarianceTransform,
    samples: &[NodeJet],
) -> Result<InvarianceReport> {
    match &transform.relabel {
        Some(Relabel::Linear { a, .. }) if a.trace().abs() > 1e-12 * a.amax().max(1.0) => {
            return Err(Error::Input(format!("linear relabeling must be isochoric, tr A = {}", a.trace())));
        }
        Some(Relabel::Flow { field, steps }) => {
            if *steps == 0 {
                return Err(Error::Input("flow relabeling needs at least one step".into()));
            }
            for jet in samples {
                let div = fd_jacobian3(|y| field(y), &jet.material, 1e-5).trace();
                if div.abs() > 1e-6 * field(&jet.material).norm().max(1.0) {
                    return Err(Error::Input(format!("relabeling field is not isochoric: Div w = {div:e}")));
                }
            }
        }
        _ => {}
    }
    if let Some(SpatialChange::Linear { a, .. }) = &transform.spatial {
        if (a + a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(Error::Input("spatial change must be rigid: A must be skew".into()));
        }
    }
    if let Some((g, _)) = &transform.group {
        if !manifold.groups().contains(g) {
            return Err(Error::UnsupportedAction(format!("group {g} is not registered on {}", manifold.tag())));
        }
    }
    let mut deviations = Vec::new();
    let mut pass = true;
    let mut max_dev: f64 = 0.0;
    for &s in &INVARIANCE_PARAMETERS {
        let mut dev: f64 = 0.0;
        for jet in samples {
            let base = lagrangian_at(model, rho0(&jet.material), jet);
            let mut t = jet.clone();
            if let Some(r) = &transform.relabel {
                let (xm, grad) = match r {
                    Relabel::Translation(c) => (jet.material + c * s, Matrix3::identity()),
                    Relabel::Linear { a, origin } => {
                        let e = matrix_exp(&(a * s));
                        (e * (jet.material - origin) + origin, e)
                    }
                    Relabel::Flow { field, steps } => flow_map(field, &jet.material, s, *steps),
                };
                let inv = grad.try_inverse().ok_or_else(|| Error::Input("relabeling is singular".into()))?;
                t.material = xm;
                t.f = t.f * inv;
                t.grad_nu = &t.grad_nu * DMatrix::from_fn(3, 3, |i, j| inv[(i, j)]);
            }
            if let Some(sp) = &transform.spatial {
                match sp {
                    SpatialChange::Translation(c) => t.x += c * s,
                    SpatialChange::Linear { a, origin } => {
                        let q = matrix_exp(&(a * s));
                        t.x = q * (t.x - origin) + origin;
                        t.xdot = q * t.xdot;
                        t.f = q * t.f;
                    }
                }
            }
            if let Some((g, xi)) = &transform.group {
                let xs = xi * s;
                let jac = group_jacobian(manifold, *g, &xs, &t.nu)?;
                t.nudot = &jac * &t.nudot;
                t.grad_nu = &jac * &t.grad_nu;
                t.nu = manifold.act(*g, &xs, &t.nu)?;
            }
            let after = lagrangian_at(model, rho0(&t.material), &t);
            dev = dev.max((after - base).abs());
        }
        if dev > invariance_tolerance(s) {
            pass = false;
        }
        max_dev = max_dev.max(dev);
        deviations.push((s, dev));
    }
    Ok(InvarianceReport { deviations, max_deviation: max_dev, pass })
}

/// Divergence-free field `w = curl A` for a trigonometric vector potential
/// `A_i = Σ_m c_{mi} sin(k_m·X + φ_m)`, with closed-form value and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CurlField {
    modes: Vec<(Vector3<f64>, Vector3<f64>, f64)>,
}

impl CurlField {
    pub fn random(seed: u64, modes: usize, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = (0..modes)
            .map(|_| {
                let k = Vector3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
                let c = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amplitude;
                (k, c, rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        Self { modes }
    }

    /// `curl (c sin(k·X + φ)) = cos(k·X + φ) k × c`.
    pub fn value(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.modes.iter().map(|(k, c, p)| k.cross(c) * (k.dot(x) + p).cos()).sum()
    }

    /// `∇w = −sin(k·X + φ) (k × c) ⊗ k`.
    pub fn gradient(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        self.modes.iter().map(|(k, c, p)| k.cross(c) * k.transpose() * (-(k.dot(x) + p).sin())).sum()
    }
}

type ChiFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
type ChiGradFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type EFn = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> f64 + Send + Sync;
type EdFFn = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Matrix3<f64> + Send + Sync;
type EdNuFn = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> DVector<f64> + Send + Sync;
type EdGFn = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync;
type EdXFn = dyn Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Vector3<f64> + Send + Sync;
type WFn = dyn Fn(&Vector3<f64>, &DVector<f64>) -> f64 + Send + Sync;
type WdXFn = dyn Fn(&Vector3<f64>, &DVector<f64>) -> Vector3<f64> + Send + Sync;
type WdNuFn = dyn Fn(&Vector3<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// A Lagrangian model assembled from closures, with optional analytic partials.
#[derive(Clone)]
pub struct ClosureModel {
    name: String,
    chi: Arc<ChiFn>,
    e: Arc<EFn>,
    w: Option<Arc<WFn>>,
    dchi_dnudot: Option<Arc<ChiGradFn>>,
    dchi_dnu: Option<Arc<ChiGradFn>>,
    de_df: Option<Arc<EdFFn>>,
    de_dnu: Option<Arc<EdNuFn>>,
    de_dgrad: Option<Arc<EdGFn>>,
    de_dmaterial: Option<Arc<EdXFn>>,
    dw_dx: Option<Arc<WdXFn>>,
    dw_dnu: Option<Arc<WdNuFn>>,
}

impl ClosureModel {
    /// Model with the given elastic energy, no co-energy and no potential.
    pub fn new(
        name: impl Into<String>,
        e: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            chi: Arc::new(|_, _| 0.0),
            e: Arc::new(e),
            w: None,
            dchi_dnudot: Some(Arc::new(|_, v: &DVector<f64>| DVector::zeros(v.len()))),
            dchi_dnu: Some(Arc::new(|v: &DVector<f64>, _| DVector::zeros(v.len()))),
            de_df: None,
            de_dnu: None,
            de_dgrad: None,
            de_dmaterial: None,
            dw_dx: None,
            dw_dnu: None,
        }
    }

    pub fn with_coenergy(mut self, chi: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.chi = Arc::new(chi);
        self.dchi_dnudot = None;
        self.dchi_dnu = None;
        self
    }

    /// `χ = ½|ν̇|²` with analytic partials.
    pub fn with_quadratic_coenergy(mut self) -> Self {
        self.chi = Arc::new(|_, v: &DVector<f64>| 0.5 * v.norm_squared());
        self.dchi_dnudot = Some(Arc::new(|_, v: &DVector<f64>| v.clone()));
        self.dchi_dnu = Some(Arc::new(|v: &DVector<f64>, _| DVector::zeros(v.len())));
        self
    }

    pub fn with_potential(mut self, w: impl Fn(&Vector3<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.w = Some(Arc::new(w));
        self.dw_dx = None;
        self.dw_dnu = None;
        self
    }

    pub fn with_de_df(
        mut self,
        f: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Matrix3<f64> + Send + Sync + 'static,
    ) -> Self {
        self.de_df = Some(Arc::new(f));
        self
    }

    pub fn with_de_dnu(
        mut self,
        f: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.de_dnu = Some(Arc::new(f));
        self
    }

    pub fn with_de_dgrad(
        mut self,
        f: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.de_dgrad = Some(Arc::new(f));
        self
    }

    pub fn with_de_dmaterial(
        mut self,
        f: impl Fn(&Vector3<f64>, &Matrix3<f64>, &DVector<f64>, &DMatrix<f64>) -> Vector3<f64> + Send + Sync + 'static,
    ) -> Self {
        self.de_dmaterial = Some(Arc::new(f));
        self
    }

    pub fn with_dw_dx(mut self, f: impl Fn(&Vector3<f64>, &DVector<f64>) -> Vector3<f64> + Send + Sync + 'static) -> Self {
        self.dw_dx = Some(Arc::new(f));
        self
    }

    pub fn with_dw_dnu(mut self, f: impl Fn(&Vector3<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.dw_dnu = Some(Arc::new(f));
        self
    }
}

impl LagrangianModel for ClosureModel {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn coenergy(&self, nu: &DVector<f64>, nudot: &DVector<f64>) -> f64 {
        (self.chi)(nu, nudot)
    }
    fn energy(&self, material: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, grad: &DMatrix<f64>) -> f64 {
        (self.e)(material, f, nu, grad)
    }
    fn potential(&self, x: &Vector3<f64>, nu: &DVector<f64>) -> f64 {
        self.w.as_ref().map_or(0.0, |w| w(x, nu))
    }
    fn d_coenergy_dnudot(&self, nu: &DVector<f64>, nudot: &DVector<f64>) -> DVector<f64> {
        match &self.dchi_dnudot {
            Some(d) => d(nu, nudot),
            None => fd_gradient(|v| self.coenergy(nu, v), nudot, PARTIAL_STEP),
        }
    }
    fn d_coenergy_dnu(&self, nu: &DVector<f64>, nudot: &DVector<f64>) -> DVector<f64> {
        match &self.dchi_dnu {
            Some(d) => d(nu, nudot),
            None => fd_gradient(|v| self.coenergy(v, nudot), nu, PARTIAL_STEP),
        }
    }
    fn d_energy_df(&self, xm: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, g: &DMatrix<f64>) -> Matrix3<f64> {
        match &self.de_df {
            Some(d) => d(xm, f, nu, g),
            None => fd_gradient33(|m| self.energy(xm, m, nu, g), f, PARTIAL_STEP),
        }
    }
    fn d_energy_dnu(&self, xm: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, g: &DMatrix<f64>) -> DVector<f64> {
        match &self.de_dnu {
            Some(d) => d(xm, f, nu, g),
            None => fd_gradient(|v| self.energy(xm, f, v, g), nu, PARTIAL_STEP),
        }
    }
    fn d_energy_dgrad(&self, xm: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.de_dgrad {
            Some(d) => d(xm, f, nu, g),
            None => fd_gradient_matrix(|m| self.energy(xm, f, nu, m), g, PARTIAL_STEP),
        }
    }
    fn d_energy_dmaterial(&self, xm: &Vector3<f64>, f: &Matrix3<f64>, nu: &DVector<f64>, g: &DMatrix<f64>) -> Vector3<f64> {
        match &self.de_dmaterial {
            Some(d) => d(xm, f, nu, g),
            None => fd_gradient3(|x| self.energy(x, f, nu, g), xm, PARTIAL_STEP),
        }
    }
    fn d_potential_dx(&self, x: &Vector3<f64>, nu: &DVector<f64>) -> Vector3<f64> {
        if self.w.is_none() {
            return Vector3::zeros();
        }
        match &self.dw_dx {
            Some(d) => d(x, nu),
            None => fd_gradient3(|y| self.potential(y, nu), x, PARTIAL_STEP),
        }
    }
    fn d_potential_dnu(&self, x: &Vector3<f64>, nu: &DVector<f64>) -> DVector<f64> {
        if self.w.is_none() {
            return DVector::zeros(nu.len());
        }
        match &self.dw_dnu {
            Some(d) => d(x, nu),
            None => fd_gradient(|v| self.potential(x, v), nu, PARTIAL_STEP),
        }
    }
}

/// Ready-made models used by tests, demos and scenarios.
pub mod presets {
    use super::*;

    fn zero_x(_: &Vector3<f64>, _: &Matrix3<f64>, _: &DVector<f64>, _: &DMatrix<f64>) -> Vector3<f64> {
        Vector3::zeros()
    }

    /// `e = ½μ|F − I|²`.
    pub fn quadratic_elastic(mu: f64) -> ClosureModel {
        ClosureModel::new("quadratic-elastic", move |_, f, _, _| 0.5 * mu * (f - Matrix3::identity()).norm_squared())
            .with_de_df(move |_, f, _, _| (f - Matrix3::identity()) * mu)
            .with_de_dnu(|_, _, nu, _| DVector::zeros(nu.len()))
            .with_de_dgrad(|_, _, _, g| DMatrix::zeros(g.nrows(), g.ncols()))
            .with_de_dmaterial(zero_x)
    }

    /// `e = ½κ|∇ν|²`.
    pub fn director_gradient(kappa: f64) -> ClosureModel {
        ClosureModel::new("director-gradient", move |_, _, _, g| 0.5 * kappa * g.norm_squared())
            .with_de_df(|_, _, _, _| Matrix3::zeros())
            .with_de_dnu(|_, _, nu, _| DVector::zeros(nu.len()))
            .with_de_dgrad(move |_, _, _, g| g * kappa)
            .with_de_dmaterial(zero_x)
    }

    /// Order-parameter waves: `χ = ½|ν̇|²`, `e = ½κ|∇ν|²`.
    pub fn wave(kappa: f64) -> ClosureModel {
        let mut m = director_gradient(kappa).with_quadratic_coenergy();
        m.name = "wave".into();
        m
    }

    /// `χ = ½|ν̇|²`, `e = ½μ|F − I|² + ½κ|∇ν|² + ½η|ν|²`.
    pub fn bulk_smooth(mu: f64, kappa: f64, eta: f64) -> ClosureModel {
        ClosureModel::new("bulk-smooth", move |_, f, nu, g| {
            0.5 * mu * (f - Matrix3::identity()).norm_squared() + 0.5 * kappa * g.norm_squared() + 0.5 * eta * nu.norm_squared()
        })
        .with_quadratic_coenergy()
        .with_de_df(move |_, f, _, _| (f - Matrix3::identity()) * mu)
        .with_de_dnu(move |_, _, nu, _| nu * eta)
        .with_de_dgrad(move |_, _, _, g| g * kappa)
        .with_de_dmaterial(zero_x)
    }

    /// Frame-indifferent coupling of a director to a material fibre:
    /// `e = ½|F τ − ν|²` on embedded S².
    pub fn coupled_director(tau: Vector3<f64>) -> ClosureModel {
        let r = move |f: &Matrix3<f64>, nu: &DVector<f64>| f * tau - Vector3::new(nu[0], nu[1], nu[2]);
        ClosureModel::new("coupled-director", move |_, f, nu, _| 0.5 * r(f, nu).norm_squared())
            .with_de_df(move |_, f, nu, _| r(f, nu) * tau.transpose())
            .with_de_dnu(move |_, f, nu, _| -DVector::from_column_slice(r(f, nu).as_slice()))
            .with_de_dgrad(|_, _, _, g| DMatrix::zeros(g.nrows(), g.ncols()))
            .with_de_dmaterial(zero_x)
    }

    /// `e = ½μ(tr C − 3) + ½k(J − 1)² + ½κ|∇ν|²`.
    pub fn isotropic_director(mu: f64, k: f64, kappa: f64) -> ClosureModel {
        ClosureModel::new("isotropic-director", move |_, f, _, g| {
            let j = f.determinant();
            0.5 * mu * ((f.transpose() * f).trace() - 3.0) + 0.5 * k * (j - 1.0).powi(2) + 0.5 * kappa * g.norm_squared()
        })
        .with_de_df(move |_, f, _, _| {
            let j = f.determinant();
            let cof = f.try_inverse().map(|i| i.transpose() * j).unwrap_or_else(Matrix3::zeros);
            f * mu + cof * (k * (j - 1.0))
        })
        .with_de_dnu(|_, _, nu, _| DVector::zeros(nu.len()))
        .with_de_dgrad(move |_, _, _, g| g * kappa)
        .with_de_dmaterial(zero_x)
    }

    /// Complex fluid `e = ½k(X)(J − 1)² + ½κ|∇ν F⁻¹|²`; invariant under
    /// isochoric relabeling when `k` is constant.
    pub fn complex_fluid(k: impl Fn(&Vector3<f64>) -> f64 + Send + Sync + 'static, kappa: f64) -> ClosureModel {
        ClosureModel::new("complex-fluid", move |x, f, _, g| {
            let j = f.determinant();
            let finv = f.try_inverse().unwrap_or_else(Matrix3::zeros);
            let spatial = g * DMatrix::from_fn(3, 3, |i, c| finv[(i, c)]);
            0.5 * k(x) * (j - 1.0).powi(2) + 0.5 * kappa * spatial.norm_squared()
        })
    }

    /// Deliberately non-objective energy `e = F₁₂`.
    pub fn non_invariant() -> ClosureModel {
        ClosureModel::new("non-invariant", |_, f, _, _| f[(0, 1)])
    }

    /// Double-well phase field `e = ν²(1 − ν)² + κ|∇ν|²`.
    pub fn double_well(kappa: f64) -> ClosureModel {
        ClosureModel::new("double-well", move |_, _, nu, g| nu[0].powi(2) * (1.0 - nu[0]).powi(2) + kappa * g.norm_squared())
            .with_de_df(|_, _, _, _| Matrix3::zeros())
            .with_de_dnu(|_, _, nu, _| DVector::from_element(1, 2.0 * nu[0] * (1.0 - nu[0]) * (1.0 - 2.0 * nu[0])))
            .with_de_dgrad(move |_, _, _, g| g * (2.0 * kappa))
            .with_de_dmaterial(zero_x)
    }
}
