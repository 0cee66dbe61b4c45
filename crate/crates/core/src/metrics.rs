//! Distances between order-parameter fields and between their gradients.

use std::sync::Arc;

use nalgebra::{DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{order_gradient, BodyGrid, KinkPlane, OrderField, Quadrature};
use crate::linear::linear_fit;
use crate::manifold::{checked_metric, geodesic_distance, Circle, CircleDistance, DistanceMode, Euclidean, Interval, Manifold};

/// How pointwise distances are aggregated over the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    /// Quadrature of the pointwise distance over the body.
    Integral,
    /// Weighted sum of maxima over the levels of an exhaustion.
    Compact,
    /// Maximum over all nodes.
    Sup,
}

/// Nested node sets `K_1 ⊆ K_2 ⊆ …` with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Exhaustion {
    levels: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl Exhaustion {
    pub fn new(levels: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.len() != weights.len() {
            return Err(Error::Input("exhaustion needs one weight per non-empty level list".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Input("exhaustion weights must be positive and finite".into()));
        }
        let mut levels = levels;
        for l in &mut levels {
            l.sort_unstable();
            l.dedup();
            if l.is_empty() {
                return Err(Error::Input("exhaustion levels must be non-empty".into()));
            }
        }
        for (n, w) in levels.windows(2).enumerate() {
            if !w[0].iter().all(|i| w[1].binary_search(i).is_ok()) {
                return Err(Error::Input(format!("exhaustion level {} is not contained in level {}", n + 1, n + 2)));
            }
            if w[0].len() == w[1].len() {
                return Err(Error::Input(format!("exhaustion levels {} and {} coincide", n + 1, n + 2)));
            }
        }
        Ok(Self { levels, weights })
    }

    /// `K_n` = nodes at distance ≥ diam/2^{n+2} from the boundary, with
    /// weights `2^{-n}`; levels are generated until every interior node is
    /// covered and repeated levels are dropped.
    pub fn default_for(grid: &BodyGrid) -> Result<Self> {
        let diam = grid.diameter();
        if diam == 0.0 {
            return Err(Error::Input("default exhaustion needs at least one active axis".into()));
        }
        let interior: Vec<usize> = grid.nodes().filter(|&i| !grid.on_boundary(i)).collect();
        if interior.is_empty() {
            return Err(Error::Input("grid has no interior nodes".into()));
        }
        let mut levels: Vec<Vec<usize>> = Vec::new();
        let mut k = 1;
        loop {
            let threshold = diam / 2f64.powi(k + 2);
            let level: Vec<usize> =
                interior.iter().cloned().filter(|&i| grid.boundary_distance(i) >= threshold * (1.0 - 1e-12)).collect();
            if !level.is_empty() && levels.last().map_or(true, |l| l.len() < level.len()) {
                levels.push(level);
            }
            if levels.last().map_or(false, |l| l.len() == interior.len()) {
                break;
            }
            k += 1;
        }
        let weights = (1..=levels.len()).map(|n| 2f64.powi(-(n as i32))).collect();
        Self::new(levels, weights)
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn check_pair(grid: &BodyGrid, a: &OrderField, b: &OrderField) -> Result<()> {
    grid.check_len(a.values.len(), "first field")?;
    grid.check_len(b.values.len(), "second field")?;
    if a.manifold.tag() != b.manifold.tag() {
        return Err(Error::Input(format!("fields live on different manifolds ({} vs {})", a.manifold.tag(), b.manifold.tag())));
    }
    Ok(())
}

/// Aggregates nodal values by the chosen kind.
pub fn aggregate(grid: &BodyGrid, kind: DistanceKind, values: &[f64], exh: Option<&Exhaustion>) -> Result<f64> {
    grid.check_len(values.len(), "pointwise values")?;
    match kind {
        DistanceKind::Integral => Ok(grid.nodes().map(|i| grid.weight(i) * values[i]).sum()),
        DistanceKind::Sup => Ok(values.iter().cloned().fold(0.0, f64::max)),
        DistanceKind::Compact => {
            let exh = exh.ok_or_else(|| Error::Input("compact distance requires an exhaustion".into()))?;
            let mut total = 0.0;
            for (level, w) in exh.levels.iter().zip(&exh.weights) {
                if level.iter().any(|&i| i >= values.len()) {
                    return Err(Error::Input("exhaustion refers to nodes outside the grid".into()));
                }
                total += w * level.iter().map(|&i| values[i]).fold(0.0, f64::max);
            }
            Ok(total)
        }
    }
}

/// Pointwise manifold distances between two fields.
pub fn pointwise_distances(a: &OrderField, b: &OrderField, mode: DistanceMode) -> Result<Vec<f64>> {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| geodesic_distance(a.manifold.as_ref(), x, y, mode))
        .collect()
}

pub fn field_distance(
    grid: &BodyGrid,
    kind: DistanceKind,
    a: &OrderField,
    b: &OrderField,
    mode: DistanceMode,
    exh: Option<&Exhaustion>,
) -> Result<f64> {
    check_pair(grid, a, b)?;
    if kind == DistanceKind::Compact && exh.is_none() {
        return Err(Error::Input("compact distance requires an exhaustion".into()));
    }
    aggregate(grid, kind, &pointwise_distances(a, b, mode)?, exh)
}

/// `(∇ν)ᵀ g_M(ν) ∇ν`, the body-space pull-back of the manifold metric.
pub fn pullback(m: &dyn Manifold, nu: &DVector<f64>, grad_nu: &nalgebra::DMatrix<f64>) -> Result<Matrix3<f64>> {
    let g = checked_metric(m, nu)?;
    let p = grad_nu.transpose() * g * grad_nu;
    let s = Matrix3::from_fn(|i, j| 0.5 * (p[(i, j)] + p[(j, i)]));
    Ok(s)
}

pub fn gradient_pullback(grid: &BodyGrid, field: &OrderField) -> Result<Vec<Matrix3<f64>>> {
    let grads = order_gradient(grid, field)?;
    field.values.iter().zip(&grads).map(|(nu, g)| pullback(field.manifold.as_ref(), nu, g)).collect()
}

/// Distance between pull-back metrics, pointwise Frobenius norm, no bounding.
pub fn gradient_distance(grid: &BodyGrid, kind: DistanceKind, a: &OrderField, b: &OrderField, exh: Option<&Exhaustion>) -> Result<f64> {
    check_pair(grid, a, b)?;
    let pa = gradient_pullback(grid, a)?;
    let pb = gradient_pullback(grid, b)?;
    let values: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| (x - y).norm()).collect();
    aggregate(grid, kind, &values, exh)
}

/// Bounded field distance plus gradient distance of the same kind.
pub fn combined_distance(grid: &BodyGrid, kind: DistanceKind, a: &OrderField, b: &OrderField, exh: Option<&Exhaustion>) -> Result<f64> {
    Ok(field_distance(grid, kind, a, b, DistanceMode::Bounded, exh)? + gradient_distance(grid, kind, a, b, exh)?)
}

/// The two counterexample families: values on the real line or angles on S¹.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CauchyCase {
    RealLine,
    Circle,
}

impl CauchyCase {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real-line" => Ok(Self::RealLine),
            "circle" => Ok(Self::Circle),
            other => Err(Error::UnknownCase(other.into())),
        }
    }

    pub fn manifold(self) -> Arc<dyn Manifold> {
        match self {
            Self::RealLine => Arc::new(Euclidean::new(1).expect("positive dimension")),
            Self::Circle => Arc::new(Circle::new(CircleDistance::Chord)),
        }
    }

    /// Size of the jump of the pointwise limit across `X₁ = 1`, measured by
    /// the case's distance.
    pub fn limit_jump(self) -> f64 {
        match self {
            Self::RealLine => 1.0,
            Self::Circle => 2.0 * 0.5f64.sin(),
        }
    }
}

/// `f_n(X) = 0` for `X₁ < 0`, `X₁ⁿ` on `[0, 1]`, `1` for `X₁ > 1`.
pub fn family_value(n: u32, x1: f64) -> f64 {
    if x1 < 0.0 {
        0.0
    } else if x1 <= 1.0 {
        x1.powi(n as i32)
    } else {
        1.0
    }
}

/// Grid on `(−1, 2)³` reduced to the `X₁` axis, with spacing `h`.
pub fn cauchy_grid(h: f64, quadrature: Quadrature) -> Result<BodyGrid> {
    BodyGrid::with_spacing([-1.0; 3], [2.0; 3], h, [true, false, false])?.with_quadrature(quadrature)
}

pub fn cauchy_family(grid: &BodyGrid, case: CauchyCase, n: u32) -> Result<OrderField> {
    Ok(OrderField::from_fn(grid, case.manifold(), |x| DVector::from_element(1, family_value(n, x[0])))?
        .with_kinks(vec![KinkPlane { axis: 0, offset: 0.0 }, KinkPlane { axis: 0, offset: 1.0 }]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyRow {
    pub n: u32,
    pub m: u32,
    pub distance: f64,
    pub analytic_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    pub case: CauchyCase,
    pub n_max: u32,
    pub h: f64,
    pub quadrature: Quadrature,
    pub rows: Vec<CauchyRow>,
    /// Jump of the pointwise limit at `X₁ = 1`.
    pub limit_jump: f64,
    /// Whether `d(f_n, f_{n_max})` decreases as `n` grows.
    pub tail_decreasing: bool,
}

impl CauchyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,m,distance,analytic_bound\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:?},{:?}\n", r.n, r.m, r.distance, r.analytic_bound));
        }
        out
    }
}

/// `9 (1/(n+1) − 1/(m+1))`.
pub fn cauchy_bound(n: u32, m: u32) -> f64 {
    9.0 * (1.0 / (n as f64 + 1.0) - 1.0 / (m as f64 + 1.0))
}

/// Integral distances `d(f_n, f_m)` for `1 ≤ n < m ≤ n_max`.
pub fn cauchy_separation_demo(case: CauchyCase, n_max: u32, h: f64, quadrature: Quadrature) -> Result<CauchyReport> {
    if n_max < 2 {
        return Err(Error::Input("n_max must be at least 2".into()));
    }
    if !(h > 0.0) || h > 0.5 {
        return Err(Error::Input(format!("spacing h = {h} must lie in (0, 0.5]")));
    }
    let grid = cauchy_grid(h, quadrature)?;
    let fields: Vec<OrderField> = (1..=n_max).map(|n| cauchy_family(&grid, case, n)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for n in 1..=n_max {
        for m in (n + 1)..=n_max {
            let d = field_distance(
                &grid,
                DistanceKind::Integral,
                &fields[n as usize - 1],
                &fields[m as usize - 1],
                DistanceMode::Raw,
                None,
            )?;
            rows.push(CauchyRow { n, m, distance: d, analytic_bound: cauchy_bound(n, m) });
        }
    }
    let tail: Vec<f64> = rows.iter().filter(|r| r.m == n_max).map(|r| r.distance).collect();
    let tail_decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    Ok(CauchyReport { case, n_max, h, quadrature, rows, limit_jump: case.limit_jump(), tail_decreasing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamReport {
    pub lengths: Vec<f64>,
    pub integral: Vec<f64>,
    pub sup: Vec<f64>,
    /// Least-squares fit `integral ≈ slope · L + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `max sup − min sup` across truncations.
    pub sup_spread: f64,
}

/// Volume fraction of one phase on the beam cross-section, in `[0, 1]`.
pub fn beam_fraction(x1: f64, x2: f64) -> f64 {
    0.25 * (1.0 + x1) * (1.0 + x2)
}

/// Distances between `ν₁` and `ν₂ = 1 − ν₁` on truncated beams
/// `(−1, 1)² × [0, L]`, homogeneous along the axis.
pub fn beam_divergence_demo(lengths: &[f64], section_nodes: usize, axial_nodes_per_unit: usize) -> Result<BeamReport> {
    if lengths.len() < 2 {
        return Err(Error::Input("need at least two truncation lengths".into()));
    }
    let m: Arc<dyn Manifold> = Arc::new(Interval::new(0.0, 1.0)?);
    let mut integral = Vec::new();
    let mut sup = Vec::new();
    for &l in lengths {
        let axial = ((l * axial_nodes_per_unit as f64).round() as usize).max(2) + 1;
        let grid = BodyGrid::new([-1.0, -1.0, 0.0], [1.0, 1.0, l], [section_nodes, section_nodes, axial])?;
        let nu1 = OrderField::from_fn(&grid, m.clone(), |x| DVector::from_element(1, beam_fraction(x[0], x[1])))?;
        let nu2 = OrderField::from_fn(&grid, m.clone(), |x| DVector::from_element(1, 1.0 - beam_fraction(x[0], x[1])))?;
        integral.push(field_distance(&grid, DistanceKind::Integral, &nu1, &nu2, DistanceMode::Raw, None)?);
        sup.push(field_distance(&grid, DistanceKind::Sup, &nu1, &nu2, DistanceMode::Raw, None)?);
    }
    let (slope, intercept, r_squared) = linear_fit(lengths, &integral);
    let sup_spread = sup.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - sup.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(BeamReport { lengths: lengths.to_vec(), integral, sup, slope, intercept, r_squared, sup_spread })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::SphericalChart;

    fn line_grid(n: usize) -> BodyGrid {
        BodyGrid::new([0.0; 3], [1.0; 3], [n, 1, 1]).unwrap()
    }

    #[test]
    fn identical_fields_are_at_zero_distance() {
        let g = line_grid(11);
        let f = cauchy_family(&g, CauchyCase::RealLine, 3).unwrap();
        let exh = Exhaustion::default_for(&g).unwrap();
        for kind in [DistanceKind::Integral, DistanceKind::Compact, DistanceKind::Sup] {
            for mode in [DistanceMode::Raw, DistanceMode::Bounded] {
                assert_eq!(field_distance(&g, kind, &f, &f, mode, Some(&exh)).unwrap(), 0.0);
            }
            assert_eq!(gradient_distance(&g, kind, &f, &f, Some(&exh)).unwrap(), 0.0);
        }
    }

    #[test]
    fn compact_needs_exhaustion() {
        let g = line_grid(5);
        let f = cauchy_family(&g, CauchyCase::RealLine, 1).unwrap();
        assert!(field_distance(&g, DistanceKind::Compact, &f, &f, DistanceMode::Raw, None).is_err());
    }

    #[test]
    fn default_exhaustion_is_nested_and_covers_interior() {
        let g = BodyGrid::new([0.0; 3], [1.0; 3], [17, 9, 1]).unwrap();
        let exh = Exhaustion::default_for(&g).unwrap();
        let interior = g.nodes().filter(|&i| !g.on_boundary(i)).count();
        assert_eq!(exh.levels().last().unwrap().len(), interior);
        assert!(exh.weight_sum() < 1.0);
        assert!(Exhaustion::new(vec![vec![1, 2], vec![2, 3]], vec![0.5, 0.25]).is_err());
    }

    #[test]
    fn gradient_distance_examples() {
        let g = line_grid(9);
        let r: Arc<dyn Manifold> = Arc::new(Euclidean::new(1).unwrap());
        let a = OrderField::from_fn(&g, r.clone(), |x| DVector::from_element(1, x[0])).unwrap();
        let b = OrderField::from_fn(&g, r.clone(), |x| DVector::from_element(1, 2.0 * x[0])).unwrap();
        let c = OrderField::from_fn(&g, r, |x| DVector::from_element(1, -x[0])).unwrap();
        assert!((gradient_distance(&g, DistanceKind::Sup, &a, &b, None).unwrap() - 3.0).abs() < 1e-12);
        assert!(gradient_distance(&g, DistanceKind::Sup, &a, &c, None).unwrap() < 1e-12);
        let p = gradient_pullback(&g, &a).unwrap();
        assert!((p[4] - Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 0.0, 0.0))).amax() < 1e-12);
    }

    #[test]
    fn sphere_pullback_of_meridian() {
        let g = line_grid(21);
        let s: Arc<dyn Manifold> = Arc::new(SphericalChart);
        let f = OrderField::from_fn(&g, s, |x| DVector::from_vec(vec![0.5 + 0.3 * x[0], 0.7])).unwrap();
        for p in gradient_pullback(&g, &f).unwrap() {
            assert!((p[(0, 0)] - 0.09).abs() < 1e-12);
            assert!(p[(1, 1)].abs() < 1e-15);
        }
    }

    #[test]
    fn combined_reduces_for_constant_fields() {
        let g = line_grid(5);
        let r: Arc<dyn Manifold> = Arc::new(Euclidean::new(1).unwrap());
        let a = OrderField::from_fn(&g, r.clone(), |_| DVector::from_element(1, 0.0)).unwrap();
        let b = OrderField::from_fn(&g, r, |_| DVector::from_element(1, 2.0)).unwrap();
        let c = combined_distance(&g, DistanceKind::Integral, &a, &b, None).unwrap();
        let f = field_distance(&g, DistanceKind::Integral, &a, &b, DistanceMode::Bounded, None).unwrap();
        assert!((c - f).abs() < 1e-15);
    }

    #[test]
    fn cauchy_first_pair() {
        let rep = cauchy_separation_demo(CauchyCase::RealLine, 2, 1.0 / 200.0, Quadrature::Simpson).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!((rep.rows[0].distance - 1.5).abs() < 1e-8);
        assert!((rep.rows[0].analytic_bound - 1.5).abs() < 1e-15);
        let rep = cauchy_separation_demo(CauchyCase::Circle, 2, 1.0 / 200.0, Quadrature::Simpson).unwrap();
        assert!(rep.rows[0].distance <= 1.5);
    }

    #[test]
    fn beam_sup_is_length_independent() {
        let rep = beam_divergence_demo(&[1.0, 2.0, 4.0], 5, 2).unwrap();
        assert!(rep.sup_spread.abs() < 1e-12);
        assert!(rep.r_squared > 0.999);
    }
}
