use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;

use multifield::kinematics::NodeJet;
use multifield::manifold::{geodesic_distance, DistanceMode, EmbeddedSphere, Manifold};
use multifield::mechanics::{lagrangian_at, presets};

fn unit(v: [f64; 3]) -> Option<Vector3<f64>> {
    let v = Vector3::from(v);
    (v.norm() > 0.1).then(|| v.normalize())
}

fn on_sphere(v: Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

proptest! {
    #[test]
    fn sphere_distance_is_a_bounded_metric(a in prop::array::uniform3(-1.0..1.0f64), b in prop::array::uniform3(-1.0..1.0f64), c in prop::array::uniform3(-1.0..1.0f64)) {
        let (Some(a), Some(b), Some(c)) = (unit(a), unit(b), unit(c)) else { return Ok(()) };
        let m = EmbeddedSphere;
        for mode in [DistanceMode::Raw, DistanceMode::Bounded] {
            let d = |p: &Vector3<f64>, q: &Vector3<f64>| geodesic_distance(&m, &on_sphere(*p), &on_sphere(*q), mode).unwrap();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
            if mode == DistanceMode::Bounded {
                prop_assert!(d(&a, &b) < 1.0);
            }
        }
    }

    #[test]
    fn observer_rotation_preserves_the_lagrangian(q in prop::array::uniform3(-2.0..2.0f64), n in prop::array::uniform3(-1.0..1.0f64), f in prop::array::uniform9(-0.3..0.3f64)) {
        let Some(n) = unit(n) else { return Ok(()) };
        let m = EmbeddedSphere;
        let tangent = |v: Vector3<f64>| v - n * n.dot(&v);
        let g = Matrix3::from_columns(&[tangent(Vector3::new(0.2, -0.4, 0.1)), tangent(Vector3::new(0.0, 0.3, 0.5)), tangent(Vector3::new(-0.6, 0.1, 0.2))]);
        let jet = NodeJet {
            material: Vector3::new(0.1, 0.2, 0.3),
            x: Vector3::new(0.4, -0.2, 0.9),
            xdot: Vector3::new(0.3, 0.1, -0.5),
            f: Matrix3::identity() + Matrix3::from_column_slice(&f),
            nu: on_sphere(n),
            nudot: on_sphere(tangent(Vector3::new(0.7, -0.1, 0.4))),
            grad_nu: DMatrix::from_column_slice(3, 3, g.as_slice()),
        };
        let model = presets::isotropic_director(1.3, 2.0, 0.6).with_quadratic_coenergy();
        let turned = jet.rotated(&Vector3::from(q), &m).unwrap();
        prop_assert!(m.check_point(&turned.nu).is_ok());
        let (l0, l1) = (lagrangian_at(&model, 1.2, &jet), lagrangian_at(&model, 1.2, &turned));
        prop_assert!((l0 - l1).abs() <= 1e-12 * l0.abs().max(1.0));
    }
}
