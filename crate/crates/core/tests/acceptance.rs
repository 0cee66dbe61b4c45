//! Acceptance checks. Each criterion prints one PASS/FAIL line with the
//! measured value next to its threshold; the test fails if any criterion does.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multifield::engine::{halving_levels, minimize_energy, refinement_study, RefinementTable, SolveOptions};
use multifield::interface::manufactured::{bar_problem, solve_bar, sphere_tension, structured_plane, BarParameters, StructuredPlane};
use multifield::interface::surface_presets::{constant, invariant};
use multifield::interface::{surface_invariance_residuals, InterfaceProblem, LevelSetSurface, SurfaceEnergy, SurfaceSample};
use multifield::kinematics::{BodyGrid, Face, MotionState, NodeJet, OrderField, PlacementField, Quadrature, Trajectory};
use multifield::manifold::{
    christoffel_fd, covariant_acceleration, DistanceMode, EmbeddedSphere, Euclidean, Manifold, SphericalChart, TangentVector,
    CHRISTOFFEL_STEP,
};
use multifield::mechanics::{
    config_balance_residual, el_residuals, el_residuals_lagrangian, el_residuals_lagrangian_static, el_residuals_static, presets,
    rotational_invariance_residual, ElResidual, LagrangianModel, NodeSet,
};
use multifield::metrics::{
    beam_divergence_demo, cauchy_separation_demo, field_distance, pointwise_distances, CauchyCase, DistanceKind, Exhaustion,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn v3(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn dv(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// Adaptive Simpson quadrature, used as an oracle independent of the grid rules.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 0.2 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn tangent(nu: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    v - nu * nu.dot(v)
}

fn random_matrix(rng: &mut ChaCha8Rng, amp: f64) -> Matrix3<f64> {
    Matrix3::from_fn(|_, _| rng.gen_range(-amp..amp))
}

/// Random jet on embedded S² with tangent rates and gradient columns.
fn random_sphere_jet(rng: &mut ChaCha8Rng) -> NodeJet {
    let nu = random_unit(rng);
    let grad = Matrix3::from_columns(&[0, 1, 2].map(|_| tangent(&nu, &Vector3::new(rng.gen(), rng.gen(), rng.gen()))));
    NodeJet {
        material: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
        x: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
        xdot: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
        f: Matrix3::identity() + random_matrix(rng, 0.3),
        nu: dv(&nu),
        nudot: dv(&tangent(&nu, &Vector3::new(rng.gen(), rng.gen(), rng.gen()))),
        grad_nu: DMatrix::from_column_slice(3, 3, grad.as_slice()),
    }
}

fn c1_cauchy_real_line() -> Outcome {
    let start = Instant::now();
    let rep = cauchy_separation_demo(CauchyCase::RealLine, 8, 1.0 / 200.0, Quadrature::Simpson).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = rep.rows.iter().map(|r| (r.distance - r.analytic_bound).abs()).fold(0.0, f64::max);
    outcome(err < 1e-4 && secs < 5.0, format!("max |d - 9(1/(n+1) - 1/(m+1))| = {err:.3e} (< 1e-4), {secs:.2} s (< 5 s)"))
}

fn c2_cauchy_circle() -> Outcome {
    let rep = cauchy_separation_demo(CauchyCase::Circle, 8, 1.0 / 200.0, Quadrature::Simpson).unwrap();
    let mut over_bound: f64 = f64::NEG_INFINITY;
    let mut oracle_err: f64 = 0.0;
    for r in &rep.rows {
        let (n, m) = (r.n as i32, r.m as i32);
        let chord = |x: f64| (2.0 * (1.0 - (x.powi(n) - x.powi(m)).cos())).max(0.0).sqrt();
        let oracle = 9.0 * adaptive_simpson(&chord, 0.0, 1.0, 1e-13);
        oracle_err = oracle_err.max((r.distance - oracle).abs());
        over_bound = over_bound.max(r.distance - r.analytic_bound);
    }
    outcome(
        over_bound <= 0.0 && oracle_err < 1e-5,
        format!("max(d - bound) = {over_bound:.3e} (<= 0), max |d - oracle| = {oracle_err:.3e} (< 1e-5)"),
    )
}

fn c3_beam() -> Outcome {
    let rep = beam_divergence_demo(&[10.0, 20.0, 40.0], 9, 4).unwrap();
    outcome(
        rep.r_squared > 0.999 && rep.sup_spread < 1e-12,
        format!("R^2 = {:.6} (> 0.999), sup spread = {:.3e} (< 1e-12)", rep.r_squared, rep.sup_spread),
    )
}

fn c4_metric_axioms() -> Outcome {
    let grid = BodyGrid::new([0.0; 3], [1.0; 3], [5, 5, 1]).unwrap();
    let exh = Exhaustion::default_for(&grid).unwrap();
    let s2: Arc<dyn Manifold> = Arc::new(EmbeddedSphere);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let random_field = |rng: &mut ChaCha8Rng| {
        let values = grid.nodes().map(|_| dv(&random_unit(rng))).collect();
        OrderField::new(s2.clone(), values).unwrap()
    };
    let mut worst_triangle: f64 = f64::NEG_INFINITY;
    let mut failures = 0usize;
    let mut max_pointwise: f64 = 0.0;
    for kind in [DistanceKind::Integral, DistanceKind::Compact, DistanceKind::Sup] {
        for _ in 0..1000 {
            let (a, b, c) = (random_field(&mut rng), random_field(&mut rng), random_field(&mut rng));
            let d = |p: &OrderField, q: &OrderField| field_distance(&grid, kind, p, q, DistanceMode::Bounded, Some(&exh)).unwrap();
            let (ab, ba, bc, ac, aa) = (d(&a, &b), d(&b, &a), d(&b, &c), d(&a, &c), d(&a, &a));
            if ab.to_bits() != ba.to_bits() || ab <= 0.0 || aa != 0.0 {
                failures += 1;
            }
            worst_triangle = worst_triangle.max(ac - ab - bc);
            for p in pointwise_distances(&a, &b, DistanceMode::Bounded).unwrap() {
                max_pointwise = max_pointwise.max(p);
            }
        }
    }
    outcome(
        failures == 0 && worst_triangle <= 1e-12 && max_pointwise < 1.0,
        format!(
            "3000 triples: {failures} symmetry/identity failures, max triangle excess = {worst_triangle:.3e}, max bounded pointwise = {max_pointwise:.6}"
        ),
    )
}

fn c5_christoffel() -> Outcome {
    let m = SphericalChart;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut err: f64 = 0.0;
    for _ in 0..100 {
        let nu = DVector::from_vec(vec![rng.gen_range(0.2..PI - 0.2), rng.gen_range(-PI..PI)]);
        let exact = m.analytic_christoffel(&nu).expect("closed form");
        let fd = christoffel_fd(&m, &nu, CHRISTOFFEL_STEP).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    err = err.max((fd.get(a, b, c) - exact.get(a, b, c)).abs());
                }
            }
        }
    }
    let nu = DVector::from_vec(vec![PI / 4.0, 0.0]);
    let v = TangentVector::new(nu.clone(), DVector::from_vec(vec![0.0, 1.0])).unwrap();
    let acc = covariant_acceleration(&m, &nu, &v, &DVector::zeros(2)).unwrap();
    let acc_err = (acc.components[0] + 0.5).abs().max(acc.components[1].abs());
    outcome(
        err < 1e-7 && acc_err < 1e-12,
        format!("max |Gamma_fd - Gamma| = {err:.3e} (< 1e-7), |acc - (-0.5, 0)| = {acc_err:.3e}"),
    )
}

fn c6_frame_indifference() -> Outcome {
    let s2 = EmbeddedSphere;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tau = Vector3::new(0.3, -0.6, 0.8);
    let models = [presets::isotropic_director(1.3, 2.1, 0.7), presets::coupled_director(tau)];
    let control = presets::non_invariant();
    let mut worst: f64 = 0.0;
    let mut control_min = f64::INFINITY;
    for _ in 0..100 {
        let jet = random_sphere_jet(&mut rng);
        for model in &models {
            worst = worst.max(rotational_invariance_residual(model, &s2, &jet).unwrap().amax());
        }
        control_min = control_min.min(rotational_invariance_residual(&control, &s2, &jet).unwrap().amax());
    }
    outcome(
        worst < 1e-8 && control_min > 1e-2,
        format!("invariant energies max = {worst:.3e} (< 1e-8), control min = {control_min:.3e} (> 1e-2)"),
    )
}

fn report_order(t: &RefinementTable) -> String {
    let cells: Vec<String> = t.rows.iter().map(|r| format!("{:.2e}", r.residual)).collect();
    format!("order = {:?} over [{}]", t.order.map(|o| (o * 1000.0).round() / 1000.0), cells.join(", "))
}

fn c7_noether_wave() -> Outcome {
    let start = Instant::now();
    let table = refinement_study("noether-wave", &halving_levels(1.0 / 32.0, 0.5, 4)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let finest = table.rows.last().unwrap().residual;
    let order_ok = !table.indeterminate && table.order.map_or(false, |o| o >= 1.0);
    outcome(
        order_ok && finest < 1e-3 && secs < 60.0,
        format!("{} (>= 1), finest = {finest:.3e} (< 1e-3), {secs:.1} s (< 60 s)", report_order(&table)),
    )
}

/// Three-level trajectory of smooth-plus-noise fields on a plane grid.
fn random_trajectory(grid: &BodyGrid, manifold: Arc<dyn Manifold>, sphere: bool, rng: &mut ChaCha8Rng, dt: f64) -> Trajectory {
    let n = grid.len();
    let base_x: Vec<Vector3<f64>> =
        grid.nodes().map(|i| grid.coords(i) + Vector3::new(rng.gen(), rng.gen(), rng.gen()) * 0.02).collect();
    let base_nu: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            let noise = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            if sphere {
                (Vector3::new(0.1, 0.2, 1.0) + noise * 0.3).normalize()
            } else {
                noise
            }
        })
        .collect();
    let vx: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()) - Vector3::repeat(0.5)).collect();
    let vn: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()) - Vector3::repeat(0.5)).collect();
    let levels = (0..3)
        .map(|k| {
            let t = (k as f64 - 1.0) * dt;
            let x = PlacementField { values: (0..n).map(|i| base_x[i] + vx[i] * t).collect() };
            let nu: Vec<DVector<f64>> = (0..n)
                .map(|i| {
                    if sphere {
                        dv(&(base_nu[i] + tangent(&base_nu[i], &vn[i]) * t + base_nu[i] * (-0.5 * t * t * vn[i].norm_squared())).normalize())
                    } else {
                        DVector::from_element(1, base_nu[i][0] + vn[i][0] * t + 0.7 * vn[i][1] * t * t)
                    }
                })
                .collect();
            let xdot = (0..n).map(|i| vx[i] + Vector3::new(0.1, -0.2, 0.05) * t).collect();
            let nudot = (0..n)
                .map(|i| {
                    if sphere {
                        dv(&tangent(&v3(&nu[i]), &(vn[i] * (1.0 + 0.3 * t))))
                    } else {
                        DVector::from_element(1, vn[i][0] + 1.4 * vn[i][1] * t)
                    }
                })
                .collect();
            let order = OrderField::new(manifold.clone(), nu).unwrap();
            MotionState::from_fields(grid, t, &x, xdot, &order, nudot).unwrap()
        })
        .collect();
    Trajectory::new(dt, levels).unwrap()
}

fn c8_el_routes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let plane = BodyGrid::new([0.0; 3], [1.0; 3], [7, 6, 1]).unwrap().with_density(|x| 1.0 + 0.3 * x[0] - 0.2 * x[1] * x[1]).unwrap();
    let r1: Arc<dyn Manifold> = Arc::new(Euclidean::new(1).unwrap());
    let s2: Arc<dyn Manifold> = Arc::new(EmbeddedSphere);
    let linear = presets::bulk_smooth(2.0, 1.5, 0.7).with_potential(|x, nu| 0.4 * x[0] * x[1] + 0.3 * nu.norm_squared());
    let director = presets::isotropic_director(1.2, 2.0, 0.6).with_quadratic_coenergy();
    let cases: [(&dyn LagrangianModel, Arc<dyn Manifold>, bool); 2] = [(&linear, r1, false), (&director, s2, true)];
    for (model, manifold, sphere) in cases {
        for _ in 0..5 {
            let traj = random_trajectory(&plane, manifold.clone(), sphere, &mut rng, 0.01);
            let pairs = [
                (
                    el_residuals(&plane, &traj, 1, model, None, NodeSet::All).unwrap(),
                    el_residuals_lagrangian(&plane, &traj, 1, model, None, NodeSet::All).unwrap(),
                ),
                (
                    el_residuals_static(&plane, &traj.levels[1], model, None, NodeSet::All).unwrap(),
                    el_residuals_lagrangian_static(&plane, &traj.levels[1], model, None, NodeSet::All).unwrap(),
                ),
            ];
            for (a, b) in &pairs {
                worst = worst.max(a.max_difference(b));
                scale = scale.max(a.max_node_norm());
            }
        }
    }
    outcome(worst <= 1e-13, format!("max nodewise difference = {worst:.3e} (<= 1e-13) at residual scale {scale:.2e}"))
}

fn c9_bar() -> Outcome {
    let sol = solve_bar(BarParameters::default()).unwrap();
    let base = bar_problem(&sol, Vector3::zeros()).unwrap();
    let x = Vector3::new(0.0, 0.2, -0.1);
    let r = base.unstructured_residuals(&x).unwrap();
    let worst = r.r_std.amax().max(r.r_sub.amax()).max(r.r_cfg.abs());
    let delta = Vector3::new(0.013, -0.021, 0.007);
    let shifted = bar_problem(&sol, delta).unwrap().unstructured_residuals(&x).unwrap();
    let shift_err = (shifted.r_std - r.r_std - delta).amax();
    outcome(
        worst < 1e-10 && shift_err < 1e-12,
        format!("max residual = {worst:.3e} (< 1e-10), |r_std(delta) - r_std - delta| = {shift_err:.3e} (< 1e-12)"),
    )
}

fn c10_sphere_tension() -> Outcome {
    let (radius, sigma) = (0.8, 0.35);
    let prob = sphere_tension(radius, sigma, 1.0, 1.1).unwrap();
    let phi = constant(sigma);
    let pts = prob.surface.sample_points(12).unwrap();
    let mut jump_err: f64 = 0.0;
    for x in &pts {
        let r = prob.structured_residuals(&phi, x).unwrap();
        jump_err = jump_err.max((r.normal_eshelby_jump - 2.0 * sigma / radius).abs());
    }
    let sphere_rep = prob.report(Some(&phi), &pts).unwrap();
    let (plane, plane_phi) = structured_plane(StructuredPlane::default()).unwrap();
    let plane_pts: Vec<Vector3<f64>> = (0..8).map(|k| Vector3::new(0.1 * k as f64 - 0.3, 0.05 * k as f64, 0.0)).collect();
    let plane_rep = plane.report(Some(&plane_phi), &plane_pts).unwrap();
    let worst = sphere_rep.max_std.max(sphere_rep.max_sub).max(plane_rep.max_std).max(plane_rep.max_sub);
    outcome(
        jump_err < 1e-6 && worst < 1e-9,
        format!("|m.[P]m - 2 sigma/R| = {jump_err:.3e} (< 1e-6), max R_std/R_sub = {worst:.3e} (< 1e-9)"),
    )
}

fn c11_nr_and_lemmas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s2 = EmbeddedSphere;
    let base = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let samples: Vec<SurfaceSample> = (0..100).map(|_| SurfaceSample::random(&mut rng, &s2, &base)).collect();
    let nr = surface_invariance_residuals(&invariant(0.5, 0.8, 0.3, 0.2), &s2, &samples, &mut rng).unwrap();
    let nr_max = nr.nr1.abs().max(nr.nr2.abs()).max(nr.nr3.abs());
    let levels = [0.08, 0.04, 0.02, 0.01].map(|h| multifield::engine::Level { h, dt: h });
    let l1 = refinement_study("lemma1-sphere", &levels).unwrap();
    let l2 = refinement_study("lemma2-sphere", &levels).unwrap();
    let near_two = |t: &RefinementTable| !t.indeterminate && t.order.map_or(false, |o| (o - 2.0).abs() <= 0.3);
    outcome(
        nr_max < 1e-8 && near_two(&l1) && near_two(&l2),
        format!("max NR = {nr_max:.3e} (< 1e-8); surface identity orders {} and {} (2 +/- 0.3)", report_order(&l1), report_order(&l2)),
    )
}

/// Largest change of per-node residual norms under rotation, relative to the
/// largest norm.
fn relative_norm_change(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().cloned().fold(0.0, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn rotate_trajectory(traj: &Trajectory, grid: &BodyGrid, q: &Rotation3<f64>) -> Trajectory {
    let levels = traj
        .levels
        .iter()
        .map(|s| {
            let x = PlacementField { values: s.x.iter().map(|v| q * v).collect() };
            let nu = s.nu.iter().map(|v| dv(&(q * v3(v)))).collect();
            let order = OrderField::new(s.manifold.clone(), nu).unwrap();
            let xdot = s.xdot.iter().map(|v| q * v).collect();
            let nudot = s.nudot.iter().map(|v| dv(&(q * v3(v)))).collect();
            MotionState::from_fields(grid, s.t, &x, xdot, &order, nudot).unwrap()
        })
        .collect();
    Trajectory::new(traj.dt, levels).unwrap()
}

fn smooth_interface_jet(x: &Vector3<f64>, radius: f64) -> NodeJet {
    let outside = x.norm() > radius;
    let v = Vector3::new(0.2 + 0.3 * x[1].sin(), -0.1 + 0.2 * x[0] * x[2], 1.0 + 0.1 * x[0]);
    let dv_dx = Matrix3::new(0.0, 0.3 * x[1].cos(), 0.0, 0.2 * x[2], 0.0, 0.2 * x[0], 0.1, 0.0, 0.0);
    let n = v.normalize();
    let grad = (Matrix3::identity() - n * n.transpose()) * dv_dx / v.norm();
    let a = Matrix3::new(0.05, 0.02, -0.01, 0.0, -0.03, 0.04, 0.01, 0.02, 0.06);
    let jump = if outside { Matrix3::new(0.02, 0.0, 0.01, -0.01, 0.03, 0.0, 0.0, 0.01, -0.02) } else { Matrix3::zeros() };
    let f = Matrix3::identity() + a * (1.0 + 0.5 * x[0]) + jump;
    NodeJet {
        material: *x,
        x: f * x,
        xdot: Vector3::new(0.1 * x[1], -0.05, 0.2 * x[0]) + if outside { Vector3::new(0.01, 0.0, 0.0) } else { Vector3::zeros() },
        f,
        nu: dv(&n),
        nudot: dv(&tangent(&n, &Vector3::new(0.3, -0.2, 0.1 + x[2]))),
        grad_nu: DMatrix::from_column_slice(3, 3, grad.as_slice()),
    }
}

fn c12_covariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let qv = Vector3::new(0.4, -0.7, 0.25);
    let q = Rotation3::from_scaled_axis(qv);
    let s2: Arc<dyn Manifold> = Arc::new(EmbeddedSphere);
    let model = presets::isotropic_director(1.2, 2.0, 0.6).with_quadratic_coenergy();
    let grid = BodyGrid::new([0.0; 3], [1.0; 3], [6, 5, 4]).unwrap();
    let traj = random_trajectory(&grid, s2.clone(), true, &mut rng, 0.01);
    let rotated = rotate_trajectory(&traj, &grid, &q);
    let el = |t: &Trajectory| -> ElResidual { el_residuals(&grid, t, 1, &model, None, NodeSet::All).unwrap() };
    let (r0, r1) = (el(&traj), el(&rotated));
    let mut worst = relative_norm_change(&r0.node_norms(), &r1.node_norms());
    let x_norms = |r: &ElResidual| r.rx.iter().map(|v| v.norm()).collect::<Vec<_>>();
    let nu_norms = |r: &ElResidual| r.rnu.iter().map(|v| v.norm()).collect::<Vec<_>>();
    worst = worst.max(relative_norm_change(&x_norms(&r0), &x_norms(&r1)));
    worst = worst.max(relative_norm_change(&nu_norms(&r0), &nu_norms(&r1)));
    let cfg = |t: &Trajectory| -> Vec<f64> {
        config_balance_residual(&grid, t, 1, &model, NodeSet::All).unwrap().residual.iter().map(|v| v.norm()).collect()
    };
    worst = worst.max(relative_norm_change(&cfg(&traj), &cfg(&rotated)));

    let radius = 0.4;
    let surface = LevelSetSurface::sphere(Vector3::zeros(), radius).unwrap();
    let model: Arc<dyn LagrangianModel> = Arc::new(model);
    let base = InterfaceProblem::new(surface.clone(), s2.clone(), model.clone(), 1.1, Arc::new(move |x| smooth_interface_jet(x, radius)));
    let s2r = s2.clone();
    let turned = InterfaceProblem::new(
        surface.clone(),
        s2.clone(),
        model,
        1.1,
        Arc::new(move |x| smooth_interface_jet(x, radius).rotated(&qv, s2r.as_ref()).unwrap()),
    );
    let phi = invariant(0.5, 0.8, 0.3, 0.2);
    let pts = surface.sample_points(8).unwrap();
    let (mut std0, mut std1, mut sub0, mut sub1, mut cfg0, mut cfg1) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for p in &pts {
        for (prob, std, sub, cfg) in [(&base, &mut std0, &mut sub0, &mut cfg0), (&turned, &mut std1, &mut sub1, &mut cfg1)] {
            let r = prob.structured_residuals(&phi as &dyn SurfaceEnergy, p).unwrap();
            std.push(r.r_std.norm());
            sub.push(r.r_sub.norm());
            cfg.push(r.r_cfg.abs());
        }
    }
    let surface_worst =
        relative_norm_change(&std0, &std1).max(relative_norm_change(&sub0, &sub1)).max(relative_norm_change(&cfg0, &cfg1));
    worst = worst.max(surface_worst);
    outcome(worst < 1e-10, format!("max relative change of residual norms = {worst:.3e} (< 1e-10)"))
}

fn c13_geodesic() -> Outcome {
    let grid = BodyGrid::new([0.0; 3], [1.0; 3], [33, 1, 1]).unwrap();
    let s2: Arc<dyn Manifold> = Arc::new(EmbeddedSphere);
    let order = OrderField::from_fn(&grid, s2, |x| {
        let t = x[0] * PI / 2.0;
        let v = Vector3::new(t.sin(), 0.3 * (PI * x[0]).sin(), t.cos() + 0.1 * x[0] * (1.0 - x[0]));
        dv(&v.normalize())
    })
    .unwrap();
    let faces = vec![Face { axis: 0, upper: false }, Face { axis: 0, upper: true }];
    let opts = SolveOptions { fixed_nu: faces.clone(), fixed_x: faces, ..Default::default() };
    let start = Instant::now();
    let rep = minimize_energy(&grid, &presets::director_gradient(1.0), (&PlacementField::identity(&grid), &order), &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let monotone = rep.energy_history().windows(2).all(|w| w[1] <= w[0]);
    let dev = grid
        .nodes()
        .map(|n| {
            let t = grid.coords(n)[0] * PI / 2.0;
            (v3(&rep.state.nu[n]) - Vector3::new(t.sin(), 0.0, t.cos())).norm()
        })
        .fold(0.0, f64::max);
    outcome(
        rep.converged && rep.residual < 1e-6 && monotone && dev < 1e-4 && secs < 10.0,
        format!(
            "residual = {:.3e} (< 1e-6), monotone = {monotone}, max deviation = {dev:.3e} (< 1e-4), {} iterations in {secs:.2} s (< 10 s)",
            rep.residual, rep.iterations
        ),
    )
}

fn c14_microcrack() -> Outcome {
    let table = refinement_study("microcrack", &halving_levels(0.1, 1.0, 4)).unwrap();
    let ok = !table.indeterminate && table.order.map_or(false, |o| (o - 2.0).abs() <= 0.2);
    outcome(ok, format!("{} (2 +/- 0.2)", report_order(&table)))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("Cauchy family on the real line", c1_cauchy_real_line),
        ("Cauchy family on the circle", c2_cauchy_circle),
        ("beam distances grow linearly, sup stays fixed", c3_beam),
        ("metric axioms and boundedness", c4_metric_axioms),
        ("sphere Christoffel symbols and covariant acceleration", c5_christoffel),
        ("frame indifference of the elastic energy", c6_frame_indifference),
        ("Noether balance for the director wave", c7_noether_wave),
        ("balance and Lagrangian residual forms agree", c8_el_routes),
        ("two-phase bar jump conditions", c9_bar),
        ("sphere under surface tension", c10_sphere_tension),
        ("surface invariance identities and lemmas", c11_nr_and_lemmas),
        ("observer covariance of balance residuals", c12_covariance),
        ("geodesic by energy minimization", c13_geodesic),
        ("microcrack decomposition convergence", c14_microcrack),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("{} criterion {:>2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, name, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
