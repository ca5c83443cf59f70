use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use proptest::prelude::*;
use wscloc::liegroup::{hat, sim3_exp, sim3_jacobian, sim3_log, so3_exp, so3_log};
use wscloc::{Rotation, Sim3Pose, Sim3Tangent};

fn series(a: Matrix4<f64>) -> Matrix4<f64> {
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..40 {
        term = term * a / k as f64;
        sum += term;
    }
    sum
}

fn algebra(xi: &Sim3Tangent) -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(hat(&xi.phi) + Matrix3::identity() * xi.sigma));
    a.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.rho);
    a
}

/// Simpson's rule over `[0, 1]` with `n` (even) intervals.
fn jacobian_integral(phi: &Vector3<f64>, sigma: f64, n: usize) -> Matrix3<f64> {
    let h = 1.0 / n as f64;
    let f = |u: f64| so3_exp(&(phi * u)).unwrap().matrix() * (sigma * u).exp();
    let mut sum = f(0.0) + f(1.0);
    for k in 1..n {
        sum += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Rotation vectors comfortably inside the principal branch.
fn canonical_phi() -> impl Strategy<Value = Vector3<f64>> {
    vec3(1.0).prop_filter("non-zero", |v| v.norm() > 1e-9).prop_flat_map(|v| {
        (0.0..std::f64::consts::PI - 0.1).prop_map(move |theta| v.normalize() * theta)
    })
}

fn tangent() -> impl Strategy<Value = Sim3Tangent> {
    (vec3(2.0), canonical_phi(), -2.0..2.0).prop_map(|(rho, phi, sigma)| Sim3Tangent::new(rho, phi, sigma))
}

fn pose() -> impl Strategy<Value = Sim3Pose> {
    tangent().prop_map(|xi| Sim3Pose::exp(&xi))
}

fn max_abs(m: Matrix4<f64>) -> f64 {
    m.abs().max()
}

#[test]
fn known_values() {
    let r = so3_exp(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).unwrap();
    let want = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    assert!((r.matrix() - want).abs().max() < 1e-15);

    let half_turn = so3_log(so3_exp(&Vector3::new(std::f64::consts::PI, 0.0, 0.0)).unwrap().matrix()).unwrap();
    assert!((half_turn - Vector3::new(std::f64::consts::PI, 0.0, 0.0)).norm() < 1e-9);

    let ln2 = 2f64.ln();
    let j = sim3_jacobian(&Vector3::zeros(), ln2);
    assert!((j - Matrix3::identity() / ln2).abs().max() < 1e-12);
    assert_eq!(sim3_jacobian(&Vector3::zeros(), 0.0), Matrix3::identity());

    let p = sim3_exp(&Sim3Tangent::new(Vector3::zeros(), Vector3::zeros(), ln2)).unwrap();
    assert!((p.scale() - 2.0).abs() < 1e-15);
    assert_eq!(*p.translation(), Vector3::zeros());
    let back = sim3_log(&p).unwrap().to_array();
    assert!(back[..6].iter().all(|x| x.abs() < 1e-15) && (back[6] - ln2).abs() < 1e-15);

    let q = Sim3Pose::new(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0), 2.0).unwrap();
    assert_eq!(q.apply(&Vector3::new(1.0, 1.0, 1.0)), Vector3::new(3.0, 2.0, 2.0));
}

#[test]
fn rejects_bad_inputs() {
    assert!(so3_exp(&Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
    assert!(so3_log(&(Matrix3::identity() * 2.0)).is_err());
    assert!(Sim3Pose::new(Rotation::identity(), Vector3::zeros(), 0.0).is_err());
    assert!(Sim3Pose::new(Rotation::identity(), Vector3::zeros(), -1.0).is_err());
}

#[test]
fn jacobian_taylor_branches_match_integral() {
    let cases = [
        (Vector3::zeros(), 0.0),
        (Vector3::new(3e-6, -2e-6, 1e-6), 0.0),
        (Vector3::zeros(), 4e-6),
        (Vector3::new(1e-7, 2e-7, -5e-6), -7e-6),
        (Vector3::new(0.2, -0.1, 0.3), 5e-6),
        (Vector3::new(4e-6, 0.0, 0.0), 1.2),
        (Vector3::new(0.3, 0.1, 0.0), 0.49),
        (Vector3::new(0.3, 0.1, 0.0), 0.51),
    ];
    for (phi, sigma) in cases {
        let err = (sim3_jacobian(&phi, sigma) - jacobian_integral(&phi, sigma, 10_000)).abs().max();
        assert!(err < 1e-8, "phi {phi:?} sigma {sigma}: {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn so3_exp_matches_series(phi in vec3(1.8).prop_filter("θ in (0.1, 3)", |v| v.norm() > 0.1 && v.norm() < 3.0)) {
        let mut a = Matrix4::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&phi));
        let want = series(a).fixed_view::<3, 3>(0, 0).into_owned();
        prop_assert!((so3_exp(&phi).unwrap().matrix() - want).abs().max() < 1e-12);
    }

    #[test]
    fn rotation_is_orthonormal(phi in vec3(4.0)) {
        let r = *so3_exp(&phi).unwrap().matrix();
        prop_assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn so3_roundtrip(phi in canonical_phi()) {
        let back = so3_log(so3_exp(&phi).unwrap().matrix()).unwrap();
        prop_assert!((back - phi).norm() < 1e-9);
    }

    #[test]
    fn so3_log_near_half_turn(axis in vec3(1.0).prop_filter("non-zero", |v| v.norm() > 0.1), eps in 0.0..1e-7) {
        let phi = axis.normalize() * (std::f64::consts::PI - eps);
        let r = so3_exp(&phi).unwrap();
        let back = so3_log(r.matrix()).unwrap();
        // at π the sign of the axis is ambiguous; compare the rotations
        let again = so3_exp(&back).unwrap();
        prop_assert!((again.matrix() - r.matrix()).abs().max() < 1e-6);
        prop_assert!((back.norm() - phi.norm()).abs() < 1e-6);
    }

    #[test]
    fn sim3_exp_matches_series(xi in (vec3(1.0), vec3(1.0), -1.0..1.0).prop_map(|(r, p, s)| Sim3Tangent::new(r, p, s))) {
        let p = sim3_exp(&xi).unwrap();
        prop_assert!(max_abs(p.as_matrix() - series(algebra(&xi))) < 1e-10);
    }

    #[test]
    fn jacobian_matches_integral(phi in vec3(1.5), sigma in -1.5..1.5) {
        let err = (sim3_jacobian(&phi, sigma) - jacobian_integral(&phi, sigma, 2_000)).abs().max();
        prop_assert!(err < 1e-8);
    }

    #[test]
    fn sim3_roundtrip(xi in tangent()) {
        let back = sim3_log(&sim3_exp(&xi).unwrap()).unwrap().to_array();
        let want = xi.to_array();
        for k in 0..7 {
            prop_assert!((back[k] - want[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_is_matrix_product(a in pose(), b in pose()) {
        prop_assert!(max_abs(a.compose(&b).as_matrix() - a.as_matrix() * b.as_matrix()) < 1e-12 * (1.0 + a.as_matrix().norm() * b.as_matrix().norm()));
        prop_assert!((a.compose(&b).scale() - a.scale() * b.scale()).abs() <= 4.0 * f64::EPSILON * a.scale() * b.scale());
    }

    #[test]
    fn group_axioms(a in pose(), b in pose(), c in pose()) {
        let lhs = a.compose(&b).compose(&c).as_matrix();
        let rhs = a.compose(&b.compose(&c)).as_matrix();
        prop_assert!(max_abs(lhs - rhs) < 1e-10 * (1.0 + lhs.norm()));
        prop_assert!(max_abs(a.compose(&Sim3Pose::identity()).as_matrix() - a.as_matrix()) < 1e-10);
        prop_assert!(max_abs(a.compose(&a.inverse()).as_matrix() - Matrix4::identity()) < 1e-10);
        prop_assert!(max_abs(a.inverse().compose(&a).as_matrix() - Matrix4::identity()) < 1e-10);
    }

    #[test]
    fn inverse_matches_linear_solve(a in pose()) {
        let numeric = a.as_matrix().try_inverse().unwrap();
        prop_assert!(max_abs(a.inverse().as_matrix() - numeric) < 1e-10 * (1.0 + numeric.norm()));
        prop_assert!(max_abs(a.inverse().inverse().as_matrix() - a.as_matrix()) < 1e-12 * (1.0 + a.as_matrix().norm()));
    }

    #[test]
    fn apply_matches_homogeneous(a in pose(), p in vec3(5.0)) {
        let h = a.as_matrix() * Vector4::new(p.x, p.y, p.z, 1.0);
        prop_assert!((a.apply(&p) - h.xyz()).norm() < 1e-12 * (1.0 + h.norm()));
    }

    #[test]
    fn unit_scale_apply_is_rigid(phi in canonical_phi(), t in vec3(3.0), p in vec3(3.0)) {
        let r = so3_exp(&phi).unwrap();
        let pose = Sim3Pose::new(r, t, 1.0).unwrap();
        prop_assert_eq!(pose.apply(&p), r.rotate(&p) + t);
    }

    #[test]
    fn retract_is_left_update(base in pose(), delta in (vec3(0.5), vec3(0.5), -0.5..0.5).prop_map(|(r, p, s)| Sim3Tangent::new(r, p, s))) {
        let moved = base.retract(&delta);
        prop_assert!(max_abs(moved.as_matrix() - Sim3Pose::exp(&delta).as_matrix() * base.as_matrix()) < 1e-10 * (1.0 + moved.as_matrix().norm()));
        let back = sim3_log(&moved.compose(&base.inverse())).unwrap().to_array();
        let want = delta.to_array();
        for k in 0..7 {
            prop_assert!((back[k] - want[k]).abs() < 1e-9);
        }
        prop_assert_eq!(base.retract(&Sim3Tangent::zero()).as_matrix(), base.as_matrix());
    }
}
