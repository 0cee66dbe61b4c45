//! Binding of scenario tasks to library operations.

use std::sync::Arc;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multifield::engine::{
    halving_levels, integrate_motion, manufactured_solution, minimize_energy, noether_wave, refinement_study, IntegrateOptions,
    SolveOptions,
};
use multifield::interface::manufactured::{bar_problem, solve_bar, sphere_tension, structured_plane, BarParameters, StructuredPlane};
use multifield::interface::{InterfaceProblem, SurfaceEnergy};
use multifield::kinematics::{BodyGrid, MotionState, OrderField, PlacementField};
use multifield::manifold::Manifold;
use multifield::metrics::{beam_divergence_demo, cauchy_separation_demo};
use multifield::Error;

use crate::report::{Series, TaskOutput};
use crate::scenario::{
    build_surface_energy, parse_faces, Demo, DistanceDemoTask, EnergyPreset, InitBlock, IntegrateTask, MinimizeTask, RefinementTask,
    ResidualTask, Scenario, ShapeBlock, SurfacePreset, Task,
};

type Outcome = Result<TaskOutput, Error>;

pub fn execute(scenario: &Scenario, task: &Task) -> Outcome {
    match task {
        Task::DistanceDemo(t) => distance_demo(t),
        Task::Minimize(t) => minimize(scenario, t),
        Task::Integrate(t) => integrate(scenario, t),
        Task::ResidualSuite(t) => residual_suite(scenario, t),
        Task::RefinementStudy(t) => refinement(t),
    }
}

fn distance_demo(t: &DistanceDemoTask) -> Outcome {
    let mut out = TaskOutput::default();
    match t.demo {
        Demo::Cauchy => {
            let rep = cauchy_separation_demo(t.case, t.n_max, t.h, t.quadrature)?;
            let mut s = Series::new(&["n", "m", "distance", "analytic_bound"]);
            let (mut err, mut over): (f64, f64) = (0.0, f64::NEG_INFINITY);
            for r in &rep.rows {
                s.push(vec![r.n as f64, r.m as f64, r.distance, r.analytic_bound]);
                err = err.max((r.distance - r.analytic_bound).abs());
                over = over.max(r.distance - r.analytic_bound);
            }
            out.metric("max_bound_error", err);
            out.metric("max_over_bound", over);
            out.metric("limit_jump", rep.limit_jump);
            out.flag("tail_decreasing", rep.tail_decreasing);
            out.series.insert("cauchy".into(), s);
        }
        Demo::Beam => {
            let rep = beam_divergence_demo(&t.lengths, t.section_nodes, t.axial_nodes_per_unit)?;
            let mut s = Series::new(&["length", "integral", "sup"]);
            for ((l, i), sup) in rep.lengths.iter().zip(&rep.integral).zip(&rep.sup) {
                s.push(vec![*l, *i, *sup]);
            }
            out.metric("slope", rep.slope);
            out.metric("intercept", rep.intercept);
            out.metric("r_squared", rep.r_squared);
            out.metric("sup_spread", rep.sup_spread);
            out.series.insert("beam".into(), s);
        }
    }
    Ok(out)
}

fn initial_order(grid: &BodyGrid, manifold: &Arc<dyn Manifold>, init: &InitBlock, seed: u64) -> Result<OrderField, Error> {
    let len = init.from.len();
    if init.to.len() != len || len == 0 {
        return Err(Error::Input("init `from` and `to` need the same non-zero length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (grid.lower()[0], grid.upper()[0]);
    let bend = if len > 1 { 1 } else { 0 };
    let values = grid
        .nodes()
        .map(|n| {
            let s = (grid.coords(n)[0] - lo) / (hi - lo);
            let mut v = DVector::from_fn(len, |i, _| (1.0 - s) * init.from[i] + s * init.to[i]);
            v[bend] += init.perturbation * (std::f64::consts::PI * s).sin();
            if init.noise > 0.0 {
                // tapered so the end values stay exactly `from` and `to`
                let taper = 4.0 * s * (1.0 - s);
                for c in v.iter_mut() {
                    *c += init.noise * taper * rng.gen_range(-1.0..1.0);
                }
            }
            manifold.retract(&v)
        })
        .collect();
    OrderField::new(manifold.clone(), values)
}

/// Largest distance from the constant-speed great circle between the ends,
/// for a sphere-valued field along `X₁`.
fn great_circle_deviation(grid: &BodyGrid, nu: &[DVector<f64>], init: &InitBlock) -> Option<f64> {
    if init.from.len() != 3 || (1..3).any(|a| grid.is_active(a)) {
        return None;
    }
    let a = Vector3::from_column_slice(&init.from).normalize();
    let b = Vector3::from_column_slice(&init.to).normalize();
    let theta = a.dot(&b).clamp(-1.0, 1.0).acos();
    if theta < 1e-12 || (std::f64::consts::PI - theta) < 1e-12 {
        return None;
    }
    let (lo, hi) = (grid.lower()[0], grid.upper()[0]);
    let dev = grid
        .nodes()
        .map(|n| {
            let s = (grid.coords(n)[0] - lo) / (hi - lo);
            let exact = (a * ((1.0 - s) * theta).sin() + b * (s * theta).sin()) / theta.sin();
            (Vector3::new(nu[n][0], nu[n][1], nu[n][2]) - exact).norm()
        })
        .fold(0.0, f64::max);
    Some(dev)
}

fn to_faces(names: &[String]) -> Result<Vec<multifield::kinematics::Face>, Error> {
    parse_faces(names).map_err(Error::Input)
}

fn minimize(scenario: &Scenario, t: &MinimizeTask) -> Outcome {
    let grid = scenario.grid()?;
    let manifold = scenario.manifold()?;
    let model = scenario.model()?;
    let order = initial_order(&grid, &manifold, &t.init, scenario.seed)?;
    let faces = to_faces(&t.fixed)?;
    let opts = SolveOptions {
        max_iterations: t.solver.max_iterations,
        step: t.solver.step,
        gradient_tol: t.solver.gradient_tol,
        fixed_x: faces.clone(),
        fixed_nu: faces,
        ..Default::default()
    };
    let rep = minimize_energy(&grid, &model, (&PlacementField::identity(&grid), &order), &opts)?;
    let mut out = TaskOutput::default();
    out.metric("iterations", rep.iterations as f64);
    out.metric("energy", rep.energy);
    out.metric("initial_energy", rep.log[0].energy);
    out.metric("residual", rep.residual);
    out.metric("stencil_residual", rep.stencil_residual);
    let monotone = rep.log.windows(2).all(|w| w[1].energy <= w[0].energy);
    out.flag("converged", rep.converged);
    out.flag("energy_monotone", monotone);
    if !rep.converged {
        out.warnings.push(format!("not converged after {} iterations (residual {:e})", rep.iterations, rep.residual));
    }
    if manifold.tag() == "S2" {
        if let Some(dev) = great_circle_deviation(&grid, &rep.state.nu, &t.init) {
            out.metric("geodesic_deviation", dev);
        }
    }
    let mut history = Series::new(&["iteration", "energy"]);
    let mut log = Series::new(&["iteration", "residual", "step", "backtracks"]);
    for r in &rep.log {
        history.push(vec![r.iteration as f64, r.energy]);
        log.push(vec![r.iteration as f64, r.residual, r.step, r.backtracks as f64]);
    }
    let dim = rep.state.nu.first().map_or(0, |v| v.len());
    let mut columns = vec!["X1".to_string(), "X2".to_string(), "X3".to_string()];
    columns.extend((1..=dim).map(|i| format!("nu{i}")));
    let mut profile = Series { columns, rows: Vec::new() };
    for n in grid.nodes() {
        let x = grid.coords(n);
        let mut row = vec![x[0], x[1], x[2]];
        row.extend(rep.state.nu[n].iter());
        profile.push(row);
    }
    out.series.insert("energy-history".into(), history);
    out.series.insert("iterations".into(), log);
    out.series.insert("profile".into(), profile);
    Ok(out)
}

fn integrate(scenario: &Scenario, t: &IntegrateTask) -> Outcome {
    let mut out = TaskOutput::default();
    let rep = if let Some(setup) = &t.wave {
        let h = t.h.ok_or_else(|| Error::Input("wave integration needs `h`".into()))?;
        let mut setup = *setup;
        if let Some(tf) = t.t_final {
            setup.t_final = tf;
        }
        if t.noether {
            let w = noether_wave(&setup, h, t.dt)?;
            out.metric("noether_rotation", w.rotation.linf);
            out.metric("noether_translation", w.translation.linf);
            out.metric("noether", w.linf());
        }
        setup.integrate(h, t.dt)?.1
    } else {
        let grid = scenario.grid()?;
        let manifold = scenario.manifold()?;
        let model = scenario.model()?;
        let init = t.init.as_ref().ok_or_else(|| Error::Input("integration needs `init`".into()))?;
        let order = initial_order(&grid, &manifold, init, scenario.seed)?;
        let n = grid.len();
        let start = MotionState::from_fields(
            &grid,
            0.0,
            &PlacementField::identity(&grid),
            vec![Vector3::zeros(); n],
            &order,
            vec![DVector::zeros(manifold.dim()); n],
        )?;
        let opts = IntegrateOptions { fixed: to_faces(&t.fixed)?, ..Default::default() };
        let t_final = t.t_final.ok_or_else(|| Error::Input("integration needs `t_final`".into()))?;
        integrate_motion(&grid, &model, &start, t.dt, t_final, &opts)?
    };
    out.metric("steps", rep.steps as f64);
    out.metric("relative_drift", rep.relative_drift);
    out.metric("final_energy", *rep.energy.last().unwrap_or(&f64::NAN));
    let mut energy = Series::new(&["t", "energy"]);
    for (s, e) in rep.trajectory.levels.iter().zip(&rep.energy) {
        energy.push(vec![s.t, *e]);
    }
    out.series.insert("energy".into(), energy);
    Ok(out)
}

fn surface_table(prob: &InterfaceProblem, phi: Option<&dyn SurfaceEnergy>, count: usize, out: &mut TaskOutput) -> Result<(), Error> {
    let pts = prob.surface.sample_points(count)?;
    let rep = prob.report(phi, &pts)?;
    let mut columns = vec!["x", "y", "z", "r_std", "r_sub", "r_cfg"];
    if phi.is_some() {
        columns.extend(["normal_eshelby_jump", "curvature_term"]);
    }
    let mut s = Series::new(&columns);
    for (rec, x) in rep.points.iter().zip(&pts) {
        let mut row = vec![
            rec.x[0],
            rec.x[1],
            rec.x[2],
            Vector3::from(rec.r_std).norm(),
            rec.r_sub.iter().map(|v| v * v).sum::<f64>().sqrt(),
            rec.r_cfg,
        ];
        if let Some(phi) = phi {
            let r = prob.structured_residuals(phi, x)?;
            row.extend([r.normal_eshelby_jump, r.curvature_term]);
        }
        s.push(row);
    }
    out.metric("max_std", rep.max_std);
    out.metric("max_sub", rep.max_sub);
    out.metric("max_cfg", rep.max_cfg);
    out.metric("residual", rep.max_std.max(rep.max_sub).max(rep.max_cfg));
    out.series.insert("points".into(), s);
    Ok(())
}

fn residual_suite(scenario: &Scenario, t: &ResidualTask) -> Outcome {
    let mut out = TaskOutput::default();
    match t.case.as_str() {
        "sphere-tension" => {
            let iface = scenario.interface.as_ref().ok_or_else(|| Error::Input("sphere-tension needs an interface block".into()))?;
            let (ShapeBlock::Sphere { center, radius }, Some(SurfacePreset::Constant { sigma })) = (&iface.shape, &iface.phi) else {
                return Err(Error::Input("sphere-tension needs a sphere with constant surface energy".into()));
            };
            if center.iter().any(|c| *c != 0.0) || iface.u != 0.0 {
                return Err(Error::Input("sphere-tension is a static sphere centred at the origin".into()));
            }
            let mu = match scenario.model.as_ref().map(|m| &m.energy) {
                Some(EnergyPreset::QuadraticElastic { mu }) => *mu,
                None => 1.0,
                Some(_) => return Err(Error::Input("sphere-tension uses the quadratic-elastic bulk model".into())),
            };
            let rho0 = scenario.body.as_ref().map_or(1.0, |b| b.rho0);
            let prob = sphere_tension(*radius, *sigma, mu, rho0)?;
            let phi = build_surface_energy(iface.phi.as_ref().expect("checked above"));
            surface_table(&prob, Some(&phi), t.points, &mut out)?;
            let target = 2.0 * sigma / radius;
            let worst = out.series["points"].rows.iter().map(|r| (r[6] - target).abs()).fold(0.0, f64::max);
            out.metric("tension_target", target);
            out.metric("tension_error", worst);
        }
        "structured-plane" => {
            let (prob, phi) = structured_plane(StructuredPlane::default())?;
            surface_table(&prob, Some(&phi), t.points, &mut out)?;
        }
        "two-phase-bar" if t.traction_shift.is_some() => {
            let sol = solve_bar(BarParameters::default())?;
            let base = bar_problem(&sol, Vector3::zeros())?;
            surface_table(&base, None, t.points, &mut out)?;
            let delta = Vector3::from(t.traction_shift.expect("guarded"));
            let shifted = bar_problem(&sol, delta)?;
            let mut worst: f64 = 0.0;
            for x in base.surface.sample_points(t.points)? {
                let (r0, r1) = (base.unstructured_residuals(&x)?, shifted.unstructured_residuals(&x)?);
                worst = worst.max((r1.r_std - r0.r_std - delta).amax());
            }
            out.metric("traction_shift_response", worst);
        }
        case => {
            let m = manufactured_solution(case, t.h)?;
            if let Some(prob) = &m.interface {
                let phi = m.surface_energy.as_ref().map(|p| p as &dyn SurfaceEnergy);
                surface_table(prob, phi, t.points, &mut out)?;
            }
            out.metric("residual", m.verify()?);
        }
    }
    Ok(out)
}

fn refinement(t: &RefinementTask) -> Outcome {
    let levels = match (&t.levels, t.h0) {
        (Some(l), _) => l.clone(),
        (None, Some(h0)) => halving_levels(h0, t.ratio, t.count),
        (None, None) => return Err(Error::Input("refinement needs `levels` or `h0`".into())),
    };
    let table = refinement_study(&t.target, &levels)?;
    let mut out = TaskOutput::default();
    if let Some(order) = table.order {
        out.metric("order", order);
    }
    out.metric("finest", table.rows.last().map_or(f64::NAN, |r| r.residual));
    out.flag("indeterminate", table.indeterminate);
    if table.indeterminate {
        out.warnings.push("fitted order is indeterminate".into());
    }
    let mut s = Series::new(&["h", "residual"]);
    let mut steps = Series::new(&["h", "dt"]);
    for r in &table.rows {
        s.push(vec![r.h, r.residual]);
        steps.push(vec![r.h, r.dt]);
    }
    out.series.insert("refinement".into(), s);
    out.series.insert("levels".into(), steps);
    Ok(out)
}
