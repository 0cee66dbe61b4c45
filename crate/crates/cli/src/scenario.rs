//! Scenario configuration: a single JSON document describing the body, the
//! order-parameter manifold, the constitutive model and a list of tasks.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use multifield::engine::{Level, StepRule, WaveSetup};
use multifield::interface::surface_presets;
use multifield::interface::{ClosureSurfaceEnergy, LevelSetSurface};
use multifield::kinematics::{BodyGrid, Face, Quadrature};
use multifield::manifold::{self, Manifold};
use multifield::mechanics::{presets, ClosureModel};
use multifield::metrics::CauchyCase;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub body: Option<BodyBlock>,
    pub manifold: Option<String>,
    pub model: Option<ModelBlock>,
    pub interface: Option<InterfaceBlock>,
    /// Default report directory; `--out` takes precedence.
    pub output: Option<String>,
    #[serde(skip)]
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyBlock {
    #[serde(default)]
    pub lower: [f64; 3],
    #[serde(default = "unit_upper")]
    pub upper: [f64; 3],
    /// Node counts per axis; an axis with one node is inactive.
    pub counts: Option<[usize; 3]>,
    /// Uniform spacing on the active axes, as an alternative to `counts`.
    pub h: Option<f64>,
    pub active: Option<[bool; 3]>,
    #[serde(default = "one")]
    pub rho0: f64,
    /// Uniform material metric, row-major.
    pub gamma: Option<[[f64; 3]; 3]>,
    #[serde(default)]
    pub quadrature: Quadrature,
}

fn unit_upper() -> [f64; 3] {
    [1.0; 3]
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub energy: EnergyPreset,
    pub coenergy: Option<CoenergyPreset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnergyPreset {
    QuadraticElastic { mu: f64 },
    DirectorGradient { kappa: f64 },
    BulkSmooth { mu: f64, kappa: f64, eta: f64 },
    CoupledDirector { tau: [f64; 3] },
    IsotropicDirector { mu: f64, k: f64, kappa: f64 },
    DoubleWell { kappa: f64 },
    NonInvariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoenergyPreset {
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceBlock {
    pub shape: ShapeBlock,
    pub phi: Option<SurfacePreset>,
    /// Normal speed of the surface.
    #[serde(default)]
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeBlock {
    Plane { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SurfacePreset {
    Constant { sigma: f64 },
    Quadratic { a: f64, b: f64 },
    Invariant { sigma: f64, a: f64, b: f64, c: f64 },
}

/// One task with its label and declared acceptance bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub expect: BTreeMap<String, Bound>,
    pub task: Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    DistanceDemo(DistanceDemoTask),
    Minimize(MinimizeTask),
    Integrate(IntegrateTask),
    ResidualSuite(ResidualTask),
    RefinementStudy(RefinementTask),
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::DistanceDemo(_) => "distance-demo",
            Self::Minimize(_) => "minimize",
            Self::Integrate(_) => "integrate",
            Self::ResidualSuite(_) => "residual-suite",
            Self::RefinementStudy(_) => "refinement-study",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Demo {
    Cauchy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceDemoTask {
    pub demo: Demo,
    #[serde(default = "real_line")]
    pub case: CauchyCase,
    #[serde(default = "default_n_max")]
    pub n_max: u32,
    #[serde(default = "default_cauchy_h")]
    pub h: f64,
    #[serde(default = "simpson")]
    pub quadrature: Quadrature,
    #[serde(default = "default_lengths")]
    pub lengths: Vec<f64>,
    #[serde(default = "default_section")]
    pub section_nodes: usize,
    #[serde(default = "default_axial")]
    pub axial_nodes_per_unit: usize,
}

fn real_line() -> CauchyCase {
    CauchyCase::RealLine
}
fn default_n_max() -> u32 {
    8
}
fn default_cauchy_h() -> f64 {
    1.0 / 200.0
}
fn simpson() -> Quadrature {
    Quadrature::Simpson
}
fn default_lengths() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}
fn default_section() -> usize {
    9
}
fn default_axial() -> usize {
    4
}

/// Initial order field interpolating `from → to` along `X₁`, bent by
/// `perturbation · sin(πs)` along the second component and optionally
/// jittered with seeded noise that vanishes at the ends, then retracted
/// onto the manifold.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBlock {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    #[serde(default)]
    pub perturbation: f64,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_gradient_tol")]
    pub gradient_tol: f64,
    #[serde(default)]
    pub step: StepRule,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self { max_iterations: default_max_iterations(), gradient_tol: default_gradient_tol(), step: StepRule::default() }
    }
}

fn default_max_iterations() -> usize {
    10_000
}
fn default_gradient_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimizeTask {
    pub init: InitBlock,
    /// Faces such as `"x1-"` or `"x2+"` where both fields are held fixed.
    #[serde(default = "default_faces")]
    pub fixed: Vec<String>,
    #[serde(default)]
    pub solver: SolverBlock,
}

fn default_faces() -> Vec<String> {
    vec!["x1-".into(), "x1+".into()]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateTask {
    /// Driven order-parameter wave on S¹; when absent the scenario body,
    /// manifold and model are integrated from `init` at rest.
    pub wave: Option<WaveSetup>,
    pub init: Option<InitBlock>,
    #[serde(default = "default_faces")]
    pub fixed: Vec<String>,
    pub h: Option<f64>,
    pub dt: f64,
    pub t_final: Option<f64>,
    #[serde(default)]
    pub noether: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualTask {
    /// A manufactured case tag, or `sphere-tension` / `structured-plane`.
    pub case: String,
    #[serde(default = "default_residual_h")]
    pub h: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// For `two-phase-bar`: traction added to the plus phase.
    pub traction_shift: Option<[f64; 3]>,
}

fn default_residual_h() -> f64 {
    0.1
}
fn default_points() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementTask {
    pub target: String,
    pub levels: Option<Vec<Level>>,
    pub h0: Option<f64>,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_count")]
    pub count: usize,
}

fn default_ratio() -> f64 {
    0.5
}
fn default_count() -> usize {
    4
}

fn parse_error(origin: &str, e: &serde_json::Error) -> CliError {
    CliError::Parse { origin: origin.to_string(), line: e.line(), column: e.column(), message: e.to_string() }
}

impl Scenario {
    /// Parses and validates a scenario document. `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut doc: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(origin, &e))?;
        let tasks = match doc.as_object_mut().and_then(|o| o.remove("tasks")) {
            Some(serde_json::Value::Array(items)) => items,
            Some(_) => return Err(CliError::Invalid("`tasks` must be an array".into())),
            None => Vec::new(),
        };
        let mut scenario: Scenario =
            serde_json::from_value(doc).map_err(|e| CliError::Invalid(format!("{origin}: {e}")))?;
        let mut seen = BTreeMap::new();
        for (i, item) in tasks.into_iter().enumerate() {
            let spec = parse_task(item, i)?;
            let count = seen.entry(spec.id.clone()).or_insert(0usize);
            *count += 1;
            if *count > 1 {
                return Err(CliError::Invalid(format!("tasks[{i}]: duplicate task id `{}`", spec.id)));
            }
            scenario.tasks.push(spec);
        }
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Invalid("`name` must be a non-empty plain file name".into()));
        }
        for (i, spec) in self.tasks.iter().enumerate() {
            let at = |msg: String| CliError::Invalid(format!("tasks[{i}] ({}): {msg}", spec.id));
            match &spec.task {
                Task::Minimize(t) => {
                    self.require_bulk().map_err(at)?;
                    parse_faces(&t.fixed).map_err(at)?;
                    if !(t.solver.gradient_tol > 0.0) {
                        return Err(at("solver.gradient_tol must be positive".into()));
                    }
                }
                Task::Integrate(t) => {
                    if !(t.dt > 0.0) {
                        return Err(at("dt must be positive".into()));
                    }
                    parse_faces(&t.fixed).map_err(at)?;
                    if t.wave.is_some() {
                        if !t.h.map_or(false, |h| h > 0.0) {
                            return Err(at("a wave integration needs a positive `h`".into()));
                        }
                    } else {
                        self.require_bulk().map_err(at)?;
                        if t.init.is_none() || !t.t_final.map_or(false, |t| t > 0.0) {
                            return Err(at("integrating the scenario body needs `init` and a positive `t_final`".into()));
                        }
                    }
                }
                Task::ResidualSuite(t) => {
                    if t.case == "sphere-tension" {
                        match &self.interface {
                            Some(InterfaceBlock { shape: ShapeBlock::Sphere { .. }, phi: Some(SurfacePreset::Constant { .. }), .. }) => {}
                            _ => return Err(at("sphere-tension needs a sphere interface with a constant surface energy".into())),
                        }
                    }
                    if !(t.h > 0.0) || t.points == 0 {
                        return Err(at("h and points must be positive".into()));
                    }
                }
                Task::RefinementStudy(t) => {
                    if t.levels.is_none() && !t.h0.map_or(false, |h| h > 0.0) {
                        return Err(at("give either `levels` or a positive `h0`".into()));
                    }
                }
                Task::DistanceDemo(_) => {}
            }
        }
        Ok(())
    }

    fn require_bulk(&self) -> std::result::Result<(), String> {
        if self.body.is_none() || self.manifold.is_none() || self.model.is_none() {
            return Err("needs `body`, `manifold` and `model` blocks".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> std::result::Result<BodyGrid, multifield::Error> {
        let b = self.body.as_ref().ok_or_else(|| multifield::Error::Input("scenario has no body".into()))?;
        let grid = match (b.counts, b.h) {
            (Some(counts), None) => BodyGrid::new(b.lower, b.upper, counts)?,
            (None, Some(h)) => BodyGrid::with_spacing(b.lower, b.upper, h, b.active.unwrap_or([true, true, true]))?,
            _ => return Err(multifield::Error::Input("body needs exactly one of `counts` and `h`".into())),
        };
        let mut grid = grid.with_uniform_density(b.rho0)?.with_quadrature(b.quadrature)?;
        if let Some(g) = b.gamma {
            let m = Matrix3::from_fn(|i, j| g[i][j]);
            grid = grid.with_material_metric(move |_| m)?;
        }
        Ok(grid)
    }

    pub fn manifold(&self) -> std::result::Result<Arc<dyn Manifold>, multifield::Error> {
        manifold::from_tag(self.manifold.as_deref().unwrap_or("R^1"))
    }

    pub fn model(&self) -> std::result::Result<ClosureModel, multifield::Error> {
        let block = self.model.as_ref().ok_or_else(|| multifield::Error::Input("scenario has no model".into()))?;
        let model = build_energy(&block.energy);
        Ok(match block.coenergy {
            Some(CoenergyPreset::Quadratic) => model.with_quadratic_coenergy(),
            None => model,
        })
    }
}

fn parse_task(item: serde_json::Value, i: usize) -> Result<TaskSpec> {
    let serde_json::Value::Object(mut obj) = item else {
        return Err(CliError::Invalid(format!("tasks[{i}]: expected an object")));
    };
    let id = match obj.remove("id") {
        Some(serde_json::Value::String(s)) if !s.is_empty() => Some(s),
        Some(_) => return Err(CliError::Invalid(format!("tasks[{i}]: `id` must be a non-empty string"))),
        None => None,
    };
    let expect: BTreeMap<String, Bound> = match obj.remove("expect") {
        Some(v) => serde_json::from_value(v).map_err(|e| CliError::Invalid(format!("tasks[{i}].expect: {e}")))?,
        None => BTreeMap::new(),
    };
    let kind = obj.get("kind").and_then(|k| k.as_str()).unwrap_or("").to_string();
    let task: Task =
        serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| CliError::Invalid(format!("tasks[{i}] ({kind}): {e}")))?;
    let id = id.unwrap_or_else(|| format!("{}-{}", i + 1, task.kind()));
    if id.contains(['/', '\\']) {
        return Err(CliError::Invalid(format!("tasks[{i}]: `id` must not contain path separators")));
    }
    Ok(TaskSpec { id, expect, task })
}

pub fn parse_faces(names: &[String]) -> std::result::Result<Vec<Face>, String> {
    names
        .iter()
        .map(|s| {
            let (axis, side) = s.strip_prefix('x').and_then(|r| r.split_at_checked(1)).ok_or_else(|| format!("bad face `{s}`"))?;
            let axis = match axis {
                "1" => 0,
                "2" => 1,
                "3" => 2,
                _ => return Err(format!("bad face axis in `{s}`")),
            };
            match side {
                "-" => Ok(Face { axis, upper: false }),
                "+" => Ok(Face { axis, upper: true }),
                _ => Err(format!("face `{s}` must end in `-` or `+`")),
            }
        })
        .collect()
}

pub fn build_energy(p: &EnergyPreset) -> ClosureModel {
    match *p {
        EnergyPreset::QuadraticElastic { mu } => presets::quadratic_elastic(mu),
        EnergyPreset::DirectorGradient { kappa } => presets::director_gradient(kappa),
        EnergyPreset::BulkSmooth { mu, kappa, eta } => presets::bulk_smooth(mu, kappa, eta),
        EnergyPreset::CoupledDirector { tau } => presets::coupled_director(Vector3::from(tau)),
        EnergyPreset::IsotropicDirector { mu, k, kappa } => presets::isotropic_director(mu, k, kappa),
        EnergyPreset::DoubleWell { kappa } => presets::double_well(kappa),
        EnergyPreset::NonInvariant => presets::non_invariant(),
    }
}

pub fn build_surface_energy(p: &SurfacePreset) -> ClosureSurfaceEnergy {
    match *p {
        SurfacePreset::Constant { sigma } => surface_presets::constant(sigma),
        SurfacePreset::Quadratic { a, b } => surface_presets::quadratic(a, b),
        SurfacePreset::Invariant { sigma, a, b, c } => surface_presets::invariant(sigma, a, b, c),
    }
}

pub fn build_surface(s: &ShapeBlock) -> std::result::Result<LevelSetSurface, multifield::Error> {
    match s {
        ShapeBlock::Plane { point, normal } => LevelSetSurface::plane(Vector3::from(*point), Vector3::from(*normal)),
        ShapeBlock::Sphere { center, radius } => LevelSetSurface::sphere(Vector3::from(*center), *radius),
    }
}
